#pragma once

// Sequential Huffman JFIF writer and a reader for the streams it produces.
// One interleaved scan, standard (Annex K) tables, no restart intervals.

#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jpeggan/jpeg_kernels.hpp"

namespace jpeggan {

struct HuffmanSpec {
  std::array<std::uint8_t, 16> bits;  // number of codes of length 1..16
  std::vector<std::uint8_t> values;
};

inline const HuffmanSpec& dc_luma_spec() {
  static const HuffmanSpec s{{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return s;
}

inline const HuffmanSpec& dc_chroma_spec() {
  static const HuffmanSpec s{{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return s;
}

inline const HuffmanSpec& ac_luma_spec() {
  static const HuffmanSpec s{
      {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d},
      {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71,
       0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72,
       0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37,
       0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
       0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83,
       0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3,
       0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
       0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
       0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
  return s;
}

inline const HuffmanSpec& ac_chroma_spec() {
  static const HuffmanSpec s{
      {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77},
      {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71, 0x13, 0x22,
       0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1,
       0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36,
       0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
       0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a,
       0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a,
       0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba,
       0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
       0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
  return s;
}

// Canonical code assignment (Annex C): code[symbol], length[symbol].
struct HuffmanCode {
  std::array<std::uint16_t, 256> code{};
  std::array<std::uint8_t, 256> length{};

  explicit HuffmanCode(const HuffmanSpec& s) {
    std::uint32_t c = 0;
    std::size_t k = 0;
    for (int len = 1; len <= 16; ++len) {
      for (int i = 0; i < s.bits[len - 1]; ++i, ++k) {
        code[s.values.at(k)] = static_cast<std::uint16_t>(c++);
        length[s.values.at(k)] = static_cast<std::uint8_t>(len);
      }
      c <<= 1;
    }
  }
};

// Magnitude category: number of bits needed for |v|.
inline int magnitude_category(int v) {
  unsigned a = static_cast<unsigned>(v < 0 ? -v : v);
  int s = 0;
  while (a) {
    ++s;
    a >>= 1;
  }
  return s;
}

namespace detail {

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t bits, int n) {
    for (int i = n - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++fill_ == 8) emit();
    }
  }

  // Pads the final byte with 1 bits.
  void flush() {
    while (fill_ != 0) put(1, 1);
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    fill_ = 0;
  }

  std::vector<std::uint8_t>& out_;
  std::uint8_t acc_ = 0;
  int fill_ = 0;
};

inline void put_u16(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

inline void put_marker(std::vector<std::uint8_t>& out, std::uint8_t m) {
  out.push_back(0xFF);
  out.push_back(m);
}

inline void put_dht(std::vector<std::uint8_t>& out, int cls, int id, const HuffmanSpec& s) {
  put_marker(out, 0xC4);
  put_u16(out, 2 + 1 + 16 + s.values.size());
  out.push_back(static_cast<std::uint8_t>(cls << 4 | id));
  out.insert(out.end(), s.bits.begin(), s.bits.end());
  out.insert(out.end(), s.values.begin(), s.values.end());
}

inline void encode_block(BitWriter& bw, const IntBlock& natural, int& pred, const HuffmanCode& dc, const HuffmanCode& ac) {
  const auto zz = zigzag(natural);
  const int diff = zz[0] - pred;
  pred = zz[0];
  const int s = magnitude_category(diff);
  if (s > 11) throw CodecError("DC difference " + std::to_string(diff) + " exceeds the baseline category range");
  bw.put(dc.code[s], dc.length[s]);
  if (s) bw.put(static_cast<std::uint32_t>(diff < 0 ? diff - 1 : diff) & ((1u << s) - 1), s);
  int run = 0;
  for (int k = 1; k < 64; ++k) {
    const int v = zz[k];
    if (v == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      bw.put(ac.code[0xF0], ac.length[0xF0]);
      run -= 16;
    }
    const int size = magnitude_category(v);
    if (size > 10) throw CodecError("AC coefficient " + std::to_string(v) + " exceeds the baseline category range");
    const int sym = run << 4 | size;
    bw.put(ac.code[sym], ac.length[sym]);
    bw.put(static_cast<std::uint32_t>(v < 0 ? v - 1 : v) & ((1u << size) - 1), size);
    run = 0;
  }
  if (run > 0) bw.put(ac.code[0x00], ac.length[0x00]);
}

inline std::string comment_text(const EncodedImage& enc) {
  return "jpeggan quality=" + std::to_string(enc.quality) + " mode=" + to_string(enc.mode);
}

}  // namespace detail

// Serializes enc. Tables with an entry above 255 (quality below ~25) need
// 16-bit DQT precision, which baseline forbids; those files are written as
// extended sequential (SOF1) with otherwise identical coding.
inline std::vector<std::uint8_t> jfif_bytes(const EncodedImage& enc) {
  enc.validate();
  using namespace detail;
  const QuantizationMatrix q = enc.quant();
  std::vector<std::uint8_t> out;
  put_marker(out, 0xD8);

  put_marker(out, 0xE0);
  put_u16(out, 16);
  for (char c : std::string("JFIF")) out.push_back(static_cast<std::uint8_t>(c));
  out.insert(out.end(), {0x00, 0x01, 0x01, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00});

  const std::string comment = comment_text(enc);
  put_marker(out, 0xFE);
  put_u16(out, 2 + comment.size());
  out.insert(out.end(), comment.begin(), comment.end());

  bool wide = false;
  for (int t = 0; t < 2; ++t) {
    const auto& table = q.for_component(t);
    const bool w = *std::max_element(table.begin(), table.end()) > 255;
    wide = wide || w;
    put_marker(out, 0xDB);
    put_u16(out, 2 + 1 + 64 * (w ? 2 : 1));
    out.push_back(static_cast<std::uint8_t>((w ? 1 : 0) << 4 | t));
    for (int v : zigzag(table)) {
      if (w) out.push_back(static_cast<std::uint8_t>(v >> 8));
      out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }
  }

  put_marker(out, wide ? 0xC1 : 0xC0);
  put_u16(out, 8 + 3 * 3);
  out.push_back(8);
  put_u16(out, enc.height);
  put_u16(out, enc.width);
  out.push_back(3);
  const auto hf = factor_w(enc.mode), vf = factor_h(enc.mode);
  out.insert(out.end(), {1, static_cast<std::uint8_t>(hf << 4 | vf), 0, 2, 0x11, 1, 3, 0x11, 1});

  put_dht(out, 0, 0, dc_luma_spec());
  put_dht(out, 1, 0, ac_luma_spec());
  put_dht(out, 0, 1, dc_chroma_spec());
  put_dht(out, 1, 1, ac_chroma_spec());

  put_marker(out, 0xDA);
  put_u16(out, 12);
  out.insert(out.end(), {3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0});

  static const HuffmanCode dcl(dc_luma_spec()), acl(ac_luma_spec()), dcc(dc_chroma_spec()), acc(ac_chroma_spec());
  BitWriter bw(out);
  std::array<int, 3> pred{};
  const std::size_t mcus_y = enc.planes[1].blocks_h, mcus_x = enc.planes[1].blocks_w;
  for (std::size_t my = 0; my < mcus_y; ++my)
    for (std::size_t mx = 0; mx < mcus_x; ++mx) {
      for (std::size_t v = 0; v < vf; ++v)
        for (std::size_t h = 0; h < hf; ++h)
          encode_block(bw, enc.planes[0].block(my * vf + v, mx * hf + h), pred[0], dcl, acl);
      encode_block(bw, enc.planes[1].block(my, mx), pred[1], dcc, acc);
      encode_block(bw, enc.planes[2].block(my, mx), pred[2], dcc, acc);
    }
  bw.flush();
  put_marker(out, 0xD9);
  return out;
}

inline std::size_t write_jfif(const EncodedImage& enc, const std::string& path) {
  const auto bytes = jfif_bytes(enc);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
  return bytes.size();
}

// ---------------------------------------------------------------- reader

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= b_.size(); }
  std::uint8_t peek(std::size_t ahead = 0) const {
    need(ahead + 1);
    return b_[pos_ + ahead];
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] << 8 | b_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size())
      throw CodecError("truncated stream: needed " + std::to_string(n) + " byte(s) at offset " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Decoding tables per F.2.2.3 (mincode / maxcode / valptr).
struct HuffmanDecoder {
  std::array<int, 17> mincode{}, maxcode{}, valptr{};
  std::vector<std::uint8_t> values;
  bool defined = false;

  void build(const HuffmanSpec& s) {
    values = s.values;
    int code = 0, k = 0;
    for (int len = 1; len <= 16; ++len) {
      const int n = s.bits[len - 1];
      if (n == 0) {
        maxcode[len] = -1;
      } else {
        valptr[len] = k;
        mincode[len] = code;
        code += n;
        k += n;
        maxcode[len] = code - 1;
      }
      code <<= 1;
    }
    defined = true;
  }
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> b, std::size_t start) : b_(b), pos_(start) {}

  int bit() {
    if (fill_ == 0) load();
    --fill_;
    return (acc_ >> fill_) & 1;
  }

  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = v << 1 | bit();
    return v;
  }

  int decode(const HuffmanDecoder& h) {
    int code = bit();
    for (int len = 1; len <= 16; ++len) {
      if (h.maxcode[len] >= 0 && code <= h.maxcode[len])
        return h.values.at(static_cast<std::size_t>(h.valptr[len] + code - h.mincode[len]));
      code = code << 1 | bit();
    }
    throw CodecError("invalid Huffman code in entropy-coded data near byte offset " + std::to_string(pos_));
  }

  // Offset of the first byte after the entropy-coded segment.
  std::size_t end() const { return pos_; }

 private:
  void load() {
    if (pos_ >= b_.size()) throw CodecError("truncated stream: entropy-coded data ends at offset " + std::to_string(pos_));
    const std::uint8_t byte = b_[pos_];
    if (byte == 0xFF) {
      if (pos_ + 1 >= b_.size())
        throw CodecError("truncated stream: entropy-coded data ends at offset " + std::to_string(pos_ + 1));
      const std::uint8_t next = b_[pos_ + 1];
      if (next != 0x00) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "%02X", next);
        throw CodecError("unexpected marker 0xFF" + std::string(buf) + " in entropy-coded data at byte offset " +
                         std::to_string(pos_ + 1));
      }
      pos_ += 2;
    } else {
      ++pos_;
    }
    acc_ = byte;
    fill_ = 8;
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_;
  unsigned acc_ = 0;
  int fill_ = 0;
};

inline int extend(int v, int s) { return s == 0 ? 0 : (v < (1 << (s - 1)) ? v - (1 << s) + 1 : v); }

inline IntBlock decode_block(BitReader& br, int& pred, const HuffmanDecoder& dc, const HuffmanDecoder& ac) {
  std::array<int, 64> zz{};
  const int s = br.decode(dc);
  if (s > 11) throw CodecError("DC category " + std::to_string(s) + " out of range");
  pred += extend(br.bits(s), s);
  zz[0] = pred;
  for (int k = 1; k < 64;) {
    const int rs = br.decode(ac);
    const int run = rs >> 4, size = rs & 15;
    if (size == 0) {
      if (run == 15) {
        k += 16;
        continue;
      }
      break;  // EOB
    }
    k += run;
    if (k > 63) throw CodecError("AC run past the end of a block");
    zz[k++] = extend(br.bits(size), size);
  }
  if (zz.size() != 64) throw CodecError("internal: block length");
  return inverse_zigzag<int>(std::span<const int>(zz));
}

inline std::optional<int> quality_from_tables(const std::array<std::array<int, 64>, 4>& tables,
                                              const std::array<bool, 4>& present, std::optional<int> hint) {
  if (!present[0] || !present[1]) throw CodecError("stream lacks quantization tables 0 and 1");
  auto matches = [&](int n) {
    const QuantizationMatrix q = scale_quant_matrix(n);
    return q.luma == tables[0] && q.chroma == tables[1];
  };
  if (hint && *hint >= 1 && *hint <= 100 && matches(*hint)) return hint;
  for (int n = 100; n >= 1; --n)
    if (matches(n)) return n;
  return std::nullopt;
}

}  // namespace detail

// Parses a stream produced by jfif_bytes. Quality is recovered from the
// quantization tables (the comment only disambiguates identical tables).
inline EncodedImage parse_jfif(std::span<const std::uint8_t> bytes) {
  using namespace detail;
  ByteReader r(bytes);
  if (r.u8() != 0xFF || r.u8() != 0xD8) throw CodecError("missing SOI marker at offset 0");

  std::array<std::array<int, 64>, 4> qt{};
  std::array<bool, 4> qt_present{};
  std::array<HuffmanDecoder, 4> dc{}, ac{};
  std::optional<int> hint;
  std::size_t width = 0, height = 0;
  int hf = 0, vf = 0;
  std::array<int, 3> comp_tq{};
  bool have_frame = false;
  std::optional<EncodedImage> result;

  while (true) {
    const std::size_t at = r.pos();
    if (r.u8() != 0xFF) throw CodecError("expected a marker at byte offset " + std::to_string(at));
    std::uint8_t m = r.u8();
    while (m == 0xFF) m = r.u8();
    if (m == 0xD9) break;
    if (m == 0xD8 || (m >= 0xD0 && m <= 0xD7) || m == 0x01)
      throw CodecError("unexpected standalone marker at byte offset " + std::to_string(at));
    const std::size_t len = r.u16();
    if (len < 2) throw CodecError("bad segment length at byte offset " + std::to_string(at + 2));
    const std::size_t seg_end = r.pos() + len - 2;
    auto payload = r.take(len - 2);
    ByteReader p(payload);

    if (m == 0xFE) {
      const std::string text(payload.begin(), payload.end());
      const auto k = text.find("quality=");
      if (k != std::string::npos) hint = std::atoi(text.c_str() + k + 8);
    } else if (m >= 0xE0 && m <= 0xEF) {
      // application segments carry nothing we need
    } else if (m == 0xDB) {
      while (!p.done()) {
        const std::uint8_t pq_tq = p.u8();
        const int pq = pq_tq >> 4, tq = pq_tq & 15;
        if (pq > 1 || tq > 3) throw CodecError("bad quantization table header at byte offset " + std::to_string(at));
        std::array<int, 64> zz{};
        for (int& v : zz) v = pq ? p.u16() : p.u8();
        qt[tq] = inverse_zigzag<int>(std::span<const int>(zz));
        qt_present[tq] = true;
      }
    } else if (m == 0xC4) {
      while (!p.done()) {
        const std::uint8_t tc_th = p.u8();
        const int tc = tc_th >> 4, th = tc_th & 15;
        if (tc > 1 || th > 3) throw CodecError("bad Huffman table header at byte offset " + std::to_string(at));
        HuffmanSpec s{};
        std::size_t total = 0;
        for (auto& b : s.bits) total += (b = p.u8());
        if (total > 256) throw CodecError("Huffman table with more than 256 symbols");
        auto vals = p.take(total);
        s.values.assign(vals.begin(), vals.end());
        (tc == 0 ? dc : ac)[th].build(s);
      }
    } else if (m == 0xC0 || m == 0xC1) {
      if (p.u8() != 8) throw CodecError("only 8-bit sample precision is supported");
      height = p.u16();
      width = p.u16();
      if (p.u8() != 3) throw CodecError("expected three components");
      for (int c = 0; c < 3; ++c) {
        if (p.u8() != c + 1) throw CodecError("unexpected component identifiers");
        const std::uint8_t hv = p.u8();
        comp_tq[c] = p.u8();
        if (comp_tq[c] > 3) throw CodecError("component references quantization table " + std::to_string(comp_tq[c]));
        if (c == 0) {
          hf = hv >> 4;
          vf = hv & 15;
        } else if (hv != 0x11) {
          throw CodecError("chroma sampling factors must be 1x1");
        }
      }
      have_frame = true;
    } else if ((m >= 0xC2 && m <= 0xCF) && m != 0xC4 && m != 0xC8 && m != 0xCC) {
      throw CodecError("unsupported frame type (progressive, lossless or arithmetic) at byte offset " +
                       std::to_string(at));
    } else if (m == 0xDD) {
      throw CodecError("restart intervals are not supported (DRI at byte offset " + std::to_string(at) + ")");
    } else if (m == 0xDA) {
      if (!have_frame) throw CodecError("scan before frame header");
      if (result) throw CodecError("multiple scans are not supported");
      if (p.u8() != 3) throw CodecError("scan must interleave all three components");
      std::array<int, 3> td{}, ta{};
      for (int c = 0; c < 3; ++c) {
        if (p.u8() != c + 1) throw CodecError("scan component order differs from the frame");
        const std::uint8_t t = p.u8();
        td[c] = t >> 4;
        ta[c] = t & 15;
        if (td[c] > 3 || ta[c] > 3 || !dc[td[c]].defined || !ac[ta[c]].defined)
          throw CodecError("scan references an undefined Huffman table");
      }
      if (p.u8() != 0 || p.u8() != 63 || p.u8() != 0) throw CodecError("scan is not a full sequential scan");

      SubsamplingMode mode;
      if (hf == 1 && vf == 1) mode = SubsamplingMode::k444;
      else if (hf == 2 && vf == 1) mode = SubsamplingMode::k422;
      else if (hf == 2 && vf == 2) mode = SubsamplingMode::k420;
      else throw CodecError("luma sampling factors " + std::to_string(hf) + "x" + std::to_string(vf) + " not supported");
      if (width == 0 || height == 0) throw CodecError("frame has zero extent");
      if (comp_tq[0] != 0 || comp_tq[1] != 1 || comp_tq[2] != 1)
        throw CodecError("unexpected quantization table assignment");
      const auto quality = quality_from_tables(qt, qt_present, hint);
      if (!quality) throw CodecError("quantization tables do not correspond to a quality factor");

      EncodedImage enc;
      enc.width = width;
      enc.height = height;
      enc.quality = *quality;
      enc.mode = mode;
      const std::size_t mcus_y = enc.padded_height() / mcu_height(mode), mcus_x = enc.padded_width() / mcu_width(mode);
      enc.planes[0] = CoeffPlane(mcus_y * vf, mcus_x * hf);
      enc.planes[1] = CoeffPlane(mcus_y, mcus_x);
      enc.planes[2] = CoeffPlane(mcus_y, mcus_x);

      BitReader br(bytes, seg_end);
      std::array<int, 3> pred{};
      for (std::size_t my = 0; my < mcus_y; ++my)
        for (std::size_t mx = 0; mx < mcus_x; ++mx) {
          for (int v = 0; v < vf; ++v)
            for (int h = 0; h < hf; ++h)
              enc.planes[0].set_block(my * vf + v, mx * hf + h, decode_block(br, pred[0], dc[td[0]], ac[ta[0]]));
          for (int c = 1; c < 3; ++c) enc.planes[c].set_block(my, mx, decode_block(br, pred[c], dc[td[c]], ac[ta[c]]));
        }
      r = ByteReader(bytes);
      r.skip(br.end());
      result = std::move(enc);
    } else {
      throw CodecError("unsupported marker 0xFF" + std::to_string(m) + " at byte offset " + std::to_string(at));
    }
  }
  if (!result) throw CodecError("stream has no scan");
  result->validate();
  return *result;
}

inline EncodedImage read_jfif(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return parse_jfif(bytes);
  } catch (const CodecError& e) {
    throw CodecError(path + ": " + e.what());
  }
}

}  // namespace jpeggan
