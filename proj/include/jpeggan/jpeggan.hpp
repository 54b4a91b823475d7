#pragma once

// Everything except the command-line driver (jpeggan/cli.hpp, which pulls in CLI11).

#include "jpeggan/adam.hpp"
#include "jpeggan/autograd.hpp"
#include "jpeggan/config.hpp"
#include "jpeggan/dataset.hpp"
#include "jpeggan/decoder.hpp"
#include "jpeggan/fid.hpp"
#include "jpeggan/image.hpp"
#include "jpeggan/jfif.hpp"
#include "jpeggan/jpeg_kernels.hpp"
#include "jpeggan/layers.hpp"
#include "jpeggan/networks.hpp"
#include "jpeggan/ops.hpp"
#include "jpeggan/params_io.hpp"
#include "jpeggan/rng.hpp"
#include "jpeggan/tensor.hpp"
#include "jpeggan/trainer.hpp"
