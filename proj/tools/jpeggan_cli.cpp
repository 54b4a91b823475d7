#include "jpeggan/cli.hpp"

int main(int argc, char** argv) { return jpeggan::cli::run(argc, argv); }
