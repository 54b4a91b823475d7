#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "jpeggan/dataset.hpp"
#include "jpeggan/decoder.hpp"
#include "jpeggan/jfif.hpp"
#include "reference_jpeg.hpp"

using namespace jpeggan;

namespace {

std::string bitstring(const HuffmanCode& h, int sym) {
  std::string s;
  for (int i = h.length[sym] - 1; i >= 0; --i) s += ((h.code[sym] >> i) & 1) ? '1' : '0';
  return s;
}

// Offset of the first entropy-coded byte (just past the SOS segment).
std::size_t scan_start(const std::vector<std::uint8_t>& b) {
  for (std::size_t i = 2; i + 3 < b.size();) {
    EXPECT_EQ(b[i], 0xFF);
    const std::size_t len = b[i + 2] << 8 | b[i + 3];
    if (b[i + 1] == 0xDA) return i + 2 + len;
    i += 2 + len;
  }
  ADD_FAILURE() << "no SOS";
  return 0;
}

bool has_marker(const std::vector<std::uint8_t>& b, std::uint8_t m) {
  const std::size_t end = scan_start(b);
  for (std::size_t i = 2; i < end;) {
    if (b[i + 1] == m) return true;
    i += 2 + (b[i + 2] << 8 | b[i + 3]);
  }
  return false;
}

EncodedImage random_coefficients(Rng& rng, std::size_t w, std::size_t h, int quality, SubsamplingMode mode,
                                 double density) {
  EncodedImage e;
  e.width = w;
  e.height = h;
  e.quality = quality;
  e.mode = mode;
  const QuantizationMatrix q = e.quant();
  const std::size_t ph = e.padded_height(), pw = e.padded_width();
  for (int c = 0; c < 3; ++c) {
    const std::size_t rows = c ? ph / factor_h(mode) : ph, cols = c ? pw / factor_w(mode) : pw;
    CoeffPlane p(rows / 8, cols / 8);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t col = 0; col < cols; ++col) {
        if (rng.uniform() > density) continue;
        const int lim = coefficient_limit(q.for_component(c)[(r % 8) * 8 + col % 8]);
        p.coeffs[r * cols + col] = static_cast<int>(rng.below(2 * lim + 1)) - lim;
      }
    e.planes[c] = std::move(p);
  }
  return e;
}

std::vector<EncodedImage> corpus() {
  std::vector<EncodedImage> out;
  std::size_t i = 0;
  for (SubsamplingMode mode : kAllModes)
    for (int q : {1, 10, 25, 50, 75, 95, 100})
      for (std::size_t res : {8, 32}) out.push_back(encode(synthetic_image(3, i++, res), q, mode));
  Rng rng(5);
  for (SubsamplingMode mode : kAllModes)
    for (double density : {0.02, 0.3, 1.0}) out.push_back(random_coefficients(rng, 24, 17, 100, mode, density));
  return out;
}

}  // namespace

TEST(Huffman, StandardTablesHaveTheirSymbolCounts) {
  for (const HuffmanSpec* s : {&dc_luma_spec(), &dc_chroma_spec(), &ac_luma_spec(), &ac_chroma_spec()}) {
    std::size_t total = 0;
    for (auto b : s->bits) total += b;
    EXPECT_EQ(total, s->values.size());
  }
  EXPECT_EQ(ac_luma_spec().values.size(), 162u);
  EXPECT_EQ(ac_chroma_spec().values.size(), 162u);
}

TEST(Huffman, CanonicalCodesMatchPublishedTables) {
  const HuffmanCode dcl(dc_luma_spec()), dcc(dc_chroma_spec()), acl(ac_luma_spec()), acc(ac_chroma_spec());
  EXPECT_EQ(bitstring(dcl, 0), "00");
  EXPECT_EQ(bitstring(dcl, 1), "010");
  EXPECT_EQ(bitstring(dcl, 5), "110");
  EXPECT_EQ(bitstring(dcl, 11), "111111110");
  EXPECT_EQ(bitstring(dcc, 0), "00");
  EXPECT_EQ(bitstring(dcc, 3), "110");
  EXPECT_EQ(bitstring(dcc, 11), "11111111110");
  EXPECT_EQ(bitstring(acl, 0x00), "1010");
  EXPECT_EQ(bitstring(acl, 0x01), "00");
  EXPECT_EQ(bitstring(acl, 0x11), "1100");
  EXPECT_EQ(bitstring(acl, 0xF0), "11111111001");
  EXPECT_EQ(bitstring(acl, 0xFA), "1111111111111110");
  EXPECT_EQ(bitstring(acc, 0x00), "00");
  EXPECT_EQ(bitstring(acc, 0x01), "01");
  EXPECT_EQ(bitstring(acc, 0xF0), "1111111010");
}

TEST(Huffman, MagnitudeCategory) {
  EXPECT_EQ(magnitude_category(0), 0);
  EXPECT_EQ(magnitude_category(1), 1);
  EXPECT_EQ(magnitude_category(-1), 1);
  EXPECT_EQ(magnitude_category(-3), 2);
  EXPECT_EQ(magnitude_category(4), 3);
  EXPECT_EQ(magnitude_category(1023), 10);
  EXPECT_EQ(magnitude_category(-2047), 11);
}

TEST(Jfif, AllZeroImageIsDcZeroPlusEob) {
  EncodedImage e;
  e.width = e.height = 8;
  e.quality = 50;
  for (auto& p : e.planes) p = CoeffPlane(1, 1);
  const auto b = jfif_bytes(e);
  const std::size_t s = scan_start(b);
  // luma "00"+"1010", chroma twice "00"+"00", then two padding 1 bits
  ASSERT_EQ(b.size(), s + 4);
  EXPECT_EQ(b[s], 0x28);
  EXPECT_EQ(b[s + 1], 0x03);
  EXPECT_EQ(b[s + 2], 0xFF);
  EXPECT_EQ(b[s + 3], 0xD9);
  EXPECT_EQ(parse_jfif(b), e);
}

TEST(Jfif, HeaderLayout) {
  const EncodedImage e = encode(synthetic_image(1, 0, 32), 50, SubsamplingMode::k420);
  const auto b = jfif_bytes(e);
  EXPECT_EQ(b[0], 0xFF);
  EXPECT_EQ(b[1], 0xD8);
  EXPECT_EQ(b[2], 0xFF);
  EXPECT_EQ(b[3], 0xE0);
  EXPECT_EQ(std::string(b.begin() + 6, b.begin() + 11), std::string("JFIF\0", 5));
  EXPECT_EQ(b[11], 1);
  EXPECT_EQ(b[12], 1);
  EXPECT_TRUE(has_marker(b, 0xC0));
  EXPECT_FALSE(has_marker(b, 0xC1));
  EXPECT_TRUE(has_marker(b, 0xDB));
  EXPECT_TRUE(has_marker(b, 0xC4));
  EXPECT_EQ(b[b.size() - 2], 0xFF);
  EXPECT_EQ(b.back(), 0xD9);
}

TEST(Jfif, SamplingFactorsFollowMode) {
  const std::map<SubsamplingMode, std::uint8_t> want{
      {SubsamplingMode::k444, 0x11}, {SubsamplingMode::k422, 0x21}, {SubsamplingMode::k420, 0x22}};
  for (auto [mode, hv] : want) {
    const auto b = jfif_bytes(encode(synthetic_image(1, 1, 16), 75, mode));
    for (std::size_t i = 2; i < b.size();) {
      if (b[i + 1] == 0xC0) {
        EXPECT_EQ(b[i + 11], hv);
        EXPECT_EQ(b[i + 14], 0x11);
        EXPECT_EQ(b[i + 17], 0x11);
        break;
      }
      i += 2 + (b[i + 2] << 8 | b[i + 3]);
    }
  }
}

TEST(Jfif, DqtCarriesTheExactTables) {
  for (int quality : {5, 50, 90}) {
    const EncodedImage e = encode(synthetic_image(2, 0, 16), quality, SubsamplingMode::k444);
    const auto b = jfif_bytes(e);
    const QuantizationMatrix q = scale_quant_matrix(quality);
    int seen = 0;
    for (std::size_t i = 2; i < scan_start(b);) {
      if (b[i + 1] == 0xDB) {
        const int pq = b[i + 4] >> 4, tq = b[i + 4] & 15;
        const auto zz = zigzag(q.for_component(tq));
        for (int k = 0; k < 64; ++k) {
          const int v = pq ? (b[i + 5 + 2 * k] << 8 | b[i + 6 + 2 * k]) : b[i + 5 + k];
          EXPECT_EQ(v, zz[k]);
        }
        ++seen;
      }
      i += 2 + (b[i + 2] << 8 | b[i + 3]);
    }
    EXPECT_EQ(seen, 2);
    EXPECT_EQ(has_marker(b, 0xC1), quality < 25);
  }
}

TEST(Jfif, RoundTripIsCoefficientExact) {
  for (const auto& e : corpus()) {
    const auto b = jfif_bytes(e);
    EXPECT_EQ(parse_jfif(b), e) << e.width << "x" << e.height << " q" << e.quality << " " << to_string(e.mode);
  }
}

TEST(Jfif, RoundTripRandomCoefficientsProperty) {
  Rng rng(77);
  for (int t = 0; t < 150; ++t) {
    const auto mode = kAllModes[rng.below(3)];
    const int quality = 1 + static_cast<int>(rng.below(100));
    const std::size_t w = 1 + rng.below(40), h = 1 + rng.below(40);
    const EncodedImage e = random_coefficients(rng, w, h, quality, mode, rng.uniform());
    ASSERT_EQ(parse_jfif(jfif_bytes(e)), e) << "trial " << t;
  }
}

TEST(Jfif, ExtremeCoefficientsAndLongZeroRuns) {
  EncodedImage e;
  e.width = e.height = 16;
  e.quality = 100;
  e.mode = SubsamplingMode::k420;
  e.planes[0] = CoeffPlane(2, 2);
  e.planes[1] = CoeffPlane(1, 1);
  e.planes[2] = CoeffPlane(1, 1);
  // DC swings of +-2046 and isolated values after 62 zeros (three ZRLs)
  e.planes[0].coeffs[0] = 1023;
  e.planes[0].coeffs[8] = -1023;
  e.planes[0].coeffs[8 * 16 + 8] = 1023;
  e.planes[0].coeffs[7 * 16 + 7] = -1023;
  e.planes[1].coeffs[7 * 8 + 7] = 1;
  e.planes[2].coeffs[63] = -1;
  EXPECT_EQ(parse_jfif(jfif_bytes(e)), e);
}

TEST(Jfif, WriterRejectsCategoryOverflow) {
  EncodedImage e;
  e.width = e.height = 8;
  e.quality = 100;
  for (auto& p : e.planes) p = CoeffPlane(1, 1);
  e.planes[0].coeffs[1] = 1030;  // within the amplitude bound, beyond the 10-bit AC category
  EXPECT_THROW(jfif_bytes(e), CodecError);
  e.planes[0].coeffs[1] = 1023;
  EXPECT_NO_THROW(jfif_bytes(e));
  e.width = 16;
  e.planes[0] = CoeffPlane(1, 2);
  e.planes[1] = CoeffPlane(1, 2);
  e.planes[2] = CoeffPlane(1, 2);
  e.planes[0].coeffs[0] = 1030;
  e.planes[0].coeffs[8] = -1030;  // DC difference 2060 > 2047
  EXPECT_THROW(jfif_bytes(e), CodecError);
}

TEST(Jfif, WriterRejectsInvalidImage) {
  EncodedImage e;
  e.width = e.height = 8;
  e.planes[0] = CoeffPlane(1, 1);
  EXPECT_THROW(jfif_bytes(e), CodecError);
}

TEST(Jfif, EntropyDataHasNoUnescapedFF) {
  for (const auto& e : corpus()) {
    const auto b = jfif_bytes(e);
    for (std::size_t i = scan_start(b); i + 2 < b.size(); ++i)
      if (b[i] == 0xFF) {
        EXPECT_EQ(b[i + 1], 0x00) << "offset " << i;
        ++i;
      }
  }
}

TEST(Jfif, TruncationIsAnExplicitError) {
  const auto b = jfif_bytes(encode(synthetic_image(4, 0, 32), 90, SubsamplingMode::k422));
  for (std::size_t n = 0; n < b.size(); ++n) {
    const std::vector<std::uint8_t> cut(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(n));
    try {
      parse_jfif(cut);
      FAIL() << "prefix of " << n << " bytes parsed";
    } catch (const CodecError& err) {
      const std::string what = err.what();
      // a cut just after a 0xFF inside entropy data reads as a truncated marker too
      EXPECT_TRUE(what.find("truncated") != std::string::npos || what.find("SOI") != std::string::npos)
          << n << ": " << what;
    }
  }
}

TEST(Jfif, TamperedStuffingReportsOffset) {
  Rng rng(9);
  int mutated = 0;
  for (const auto& e : corpus()) {
    const auto b = jfif_bytes(e);
    for (std::size_t i = scan_start(b); i + 3 < b.size(); ++i) {
      if (b[i] != 0xFF || b[i + 1] != 0x00) continue;
      auto bad = b;
      bad[i + 1] = static_cast<std::uint8_t>(1 + rng.below(0xFE));  // any marker byte
      try {
        parse_jfif(bad);
        FAIL() << "tampered stream parsed";
      } catch (const CodecError& err) {
        const std::string what = err.what();
        EXPECT_NE(what.find("offset " + std::to_string(i + 1)), std::string::npos) << what;
      }
      ++mutated;
    }
  }
  EXPECT_GT(mutated, 20);
}

TEST(Jfif, RejectsProgressiveAndRestartIntervals) {
  auto b = jfif_bytes(encode(synthetic_image(5, 0, 16), 50, SubsamplingMode::k444));
  auto prog = b;
  for (std::size_t i = 2; i < prog.size();) {
    if (prog[i + 1] == 0xC0) {
      prog[i + 1] = 0xC2;
      break;
    }
    i += 2 + (prog[i + 2] << 8 | prog[i + 3]);
  }
  try {
    parse_jfif(prog);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("progressive"), std::string::npos);
  }
  auto dri = b;
  const std::vector<std::uint8_t> seg{0xFF, 0xDD, 0x00, 0x04, 0x00, 0x01};
  dri.insert(dri.begin() + 2, seg.begin(), seg.end());
  try {
    parse_jfif(dri);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("restart"), std::string::npos);
  }
}

TEST(Jfif, QualityRecoveredWithoutComment) {
  const EncodedImage e = encode(synthetic_image(6, 0, 16), 63, SubsamplingMode::k422);
  auto b = jfif_bytes(e);
  for (std::size_t i = 2; i < b.size();) {
    const std::size_t len = b[i + 2] << 8 | b[i + 3];
    if (b[i + 1] == 0xFE) {
      b.erase(b.begin() + static_cast<std::ptrdiff_t>(i), b.begin() + static_cast<std::ptrdiff_t>(i + 2 + len));
      break;
    }
    i += 2 + len;
  }
  EXPECT_EQ(parse_jfif(b), e);
}

TEST(Jfif, SmallerAtLowerQualityProperty) {
  for (std::size_t i = 0; i < 100; ++i) {
    const Image img = synthetic_image(8, i, 32);
    for (SubsamplingMode mode : kAllModes)
      EXPECT_LE(jfif_bytes(encode(img, 25, mode)).size(), jfif_bytes(encode(img, 100, mode)).size()) << i;
  }
}

TEST(Jfif, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "jpeggan_jfif_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "a.jpg").string();
  const EncodedImage e = encode(synthetic_image(7, 0, 32), 80, SubsamplingMode::k420);
  const std::size_t n = write_jfif(e, path);
  EXPECT_EQ(n, std::filesystem::file_size(path));
  EXPECT_EQ(read_jfif(path), e);
  EXPECT_THROW(read_jfif((dir / "missing.jpg").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

// libjpeg rounds Y, Cb, Cr to 8 bits before color conversion; a 0.5 sample
// error reaches RGB as up to 0.5 + 1.772 * 0.5, so RGB agreement is +-2.
TEST(Interop, ReferenceDecoderRgbWithinSampleRounding) {
  int worst = 0;
  for (const auto& e : corpus()) {
    const auto b = jfif_bytes(e);
    const Image ref = reference::libjpeg_decode(b);
    const Image ours = decode_image(e);
    ASSERT_EQ(ref.width, ours.width);
    ASSERT_EQ(ref.height, ours.height);
    for (std::size_t i = 0; i < ref.rgb.size(); ++i)
      worst = std::max(worst, static_cast<int>(std::abs(ref.rgb[i] - std::round(ours.rgb[i]))));
  }
  EXPECT_LE(worst, 2);
}

TEST(Interop, ReferenceDecoderComponentSamplesWithinOne) {
  for (const auto& e : corpus()) {
    const Image ref = reference::libjpeg_decode(jfif_bytes(e), true);
    Tensor<double> ycc;
    {
      NoGradGuard ng;
      ycc = decode_ycc(coefficient_tensors<double>(std::span(&e, 1)), e.quant(), e.mode);
    }
    const std::size_t h = ycc.dim(2), w = ycc.dim(3);
    for (std::size_t r = 0; r < e.height; ++r)
      for (std::size_t c = 0; c < e.width; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch)
          ASSERT_LE(std::abs(ref.at(r, c, ch) - std::round(ycc[(ch * h + r) * w + c])), 1.0);
  }
}
