#include "attrstream/trace.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <sstream>

#include "attrstream/error.hpp"

namespace attrstream {

namespace {

constexpr std::uint8_t kMagic[4] = {'V', 'S', 'T', 'R'};

using Crc64Xz = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL,
                                   0xFFFFFFFFFFFFFFFFULL,
                                   0xFFFFFFFFFFFFFFFFULL, true, true>;

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(std::span<const std::uint8_t> bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t position() const { return pos_; }
  void skip(std::size_t n) {
    require(n, "header");
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void require(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw Error(ErrorKind::truncated,
                  std::string("trace truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    require(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    require(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> f32_array(std::uint64_t count, const char* what) {
    // Checked before allocating so a corrupted count cannot request
    // gigabytes of memory.
    if (count > remaining() / 4) {
      throw Error(ErrorKind::truncated,
                  std::string("trace truncated while reading ") + what);
    }
    std::vector<float> v(static_cast<std::size_t>(count));
    for (auto& x : v) x = std::bit_cast<float>(u32(what));
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Saturates instead of wrapping so corrupted dimensions fail the length check.
std::uint64_t saturating_product(std::initializer_list<std::uint64_t> factors) {
  std::uint64_t out = 1;
  for (std::uint64_t f : factors) {
    if (f != 0 && out > UINT64_MAX / f) return UINT64_MAX;
    out *= f;
  }
  return out;
}

std::string format_index(const std::vector<std::size_t>& index) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < index.size(); ++i) os << (i ? "," : "") << index[i];
  os << ')';
  return os.str();
}

}  // namespace

void AttentionTrace::gather_step(std::uint32_t step, std::span<float> out) const {
  const std::size_t m = num_vision_tokens;
  std::size_t lh = 0;
  for (std::uint32_t l = 0; l < num_layers; ++l) {
    for (std::uint32_t h = 0; h < num_heads; ++h, ++lh) {
      const auto src = row(l, h, step);
      std::copy(src.begin(), src.end(), out.begin() + lh * m);
    }
  }
}

std::vector<TraceViolation> validate_trace(const AttentionTrace& t) {
  std::vector<TraceViolation> out;
  auto fail = [&](std::string field, std::vector<std::size_t> index, std::string msg) {
    out.push_back({std::move(field), std::move(index), std::move(msg)});
  };

  const std::size_t L = t.num_layers, H = t.num_heads, T = t.num_steps,
                    M = t.num_vision_tokens, D = t.feature_dim;
  if (static_cast<std::size_t>(t.grid.rows) * t.grid.cols != M) {
    fail("grid_dims", {}, "rows*cols must equal the vision token count");
  }
  if (t.tokens.size() != T) fail("tokens", {}, "token count must equal num_steps");
  if (t.feature_grid.size() != M * D) fail("feature_grid", {}, "feature_grid must hold M*D values");
  if (t.saliency.size() != M) fail("saliency", {}, "saliency must hold M values");

  if (t.attn.size() != L * H * T * M) {
    fail("attn", {}, "attn must hold L*H*T*M values");
  } else {
    for (std::uint32_t l = 0; l < L; ++l)
      for (std::uint32_t h = 0; h < H; ++h)
        for (std::uint32_t s = 0; s < T; ++s) {
          double sum = 0.0;
          const auto r = t.row(l, h, s);
          for (std::size_t i = 0; i < M; ++i) {
            const float a = r[i];
            if (!std::isfinite(a) || a < 0.0f || a > 1.0f) {
              fail("attn", {l, h, s, i}, "attention entry outside [0,1]");
            } else {
              sum += a;
            }
          }
          if (sum > 1.0 + kRowSumTolerance) {
            fail("attn", {l, h, s}, "attention row sums above 1");
          }
        }
  }

  if (t.feature_grid.size() == M * D) {
    for (std::size_t i = 0; i < t.feature_grid.size(); ++i) {
      if (!std::isfinite(t.feature_grid[i])) {
        fail("feature_grid", {i / (D ? D : 1), i % (D ? D : 1)}, "non-finite feature");
      }
    }
  }
  for (std::size_t i = 0; i < t.saliency.size(); ++i) {
    if (!std::isfinite(t.saliency[i]) || t.saliency[i] < 0.0f) {
      fail("saliency", {i}, "saliency must be finite and nonnegative");
    }
  }

  std::uint32_t prev_end = 0;
  for (std::size_t k = 0; k < t.spans.size(); ++k) {
    const Span& sp = t.spans[k];
    if (!(sp.start < sp.end && sp.end <= T)) {
      fail("spans", {k}, "span must satisfy 0 <= start < end <= T");
    } else if (sp.start < prev_end) {
      fail("spans", {k}, "spans must be disjoint and ordered");
    } else {
      prev_end = sp.end;
    }
  }
  return out;
}

std::uint64_t crc64(std::span<const std::uint8_t> bytes) {
  Crc64Xz crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::vector<std::uint8_t> encode_trace(const AttentionTrace& t) {
  const auto violations = validate_trace(t);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw Error(ErrorKind::validation, "invalid trace: " + v.field + format_index(v.index) +
                                           ": " + v.message);
  }
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kTraceVersion);
  for (std::uint32_t v : {t.num_layers, t.num_heads, t.num_steps, t.num_vision_tokens,
                          t.feature_dim, t.grid.rows, t.grid.cols}) {
    w.u32(v);
  }
  w.u32(static_cast<std::uint32_t>(t.tokens.size()));
  for (const auto& tok : t.tokens) w.str(tok);
  for (float a : t.attn) w.f32(a);
  for (float f : t.feature_grid) w.f32(f);
  for (float s : t.saliency) w.f32(s);
  w.u32(static_cast<std::uint32_t>(t.spans.size()));
  for (const auto& sp : t.spans) {
    w.u32(sp.start);
    w.u32(sp.end);
    w.str(sp.label);
  }
  const std::uint64_t crc = crc64(w.bytes());
  w.u64(crc);
  return std::move(w.bytes());
}

AttentionTrace decode_trace(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.require(4, "magic");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorKind::bad_magic, "not a VSTRACE file (bad magic)");
  }
  r.skip(4);
  const std::uint32_t version = r.u32("version");
  if (version != kTraceVersion) {
    throw Error(ErrorKind::version,
                "unsupported VSTRACE version " + std::to_string(version));
  }

  AttentionTrace t;
  t.num_layers = r.u32("header");
  t.num_heads = r.u32("header");
  t.num_steps = r.u32("header");
  t.num_vision_tokens = r.u32("header");
  t.feature_dim = r.u32("header");
  t.grid.rows = r.u32("header");
  t.grid.cols = r.u32("header");

  const std::uint32_t token_count = r.u32("token table");
  // Each token needs at least its 4-byte length prefix.
  if (token_count > r.remaining() / 4) {
    throw Error(ErrorKind::truncated, "trace truncated while reading token table");
  }
  t.tokens.reserve(token_count);
  for (std::uint32_t i = 0; i < token_count; ++i) t.tokens.push_back(r.str("token table"));

  const std::uint64_t attn_count =
      saturating_product({t.num_layers, t.num_heads, t.num_steps, t.num_vision_tokens});
  t.attn = r.f32_array(attn_count, "attention");
  t.feature_grid = r.f32_array(saturating_product({t.num_vision_tokens, t.feature_dim}),
                               "feature grid");
  t.saliency = r.f32_array(t.num_vision_tokens, "saliency");

  const std::uint32_t span_count = r.u32("span table");
  if (span_count > r.remaining() / 12) {
    throw Error(ErrorKind::truncated, "trace truncated while reading span table");
  }
  t.spans.reserve(span_count);
  for (std::uint32_t i = 0; i < span_count; ++i) {
    Span sp;
    sp.start = r.u32("span table");
    sp.end = r.u32("span table");
    sp.label = r.str("span table");
    t.spans.push_back(std::move(sp));
  }

  const std::size_t payload_end = r.position();
  const std::uint64_t stored = r.u64("checksum");
  if (r.remaining() != 0) {
    throw Error(ErrorKind::format, "trailing bytes after VSTRACE checksum");
  }
  if (stored != crc64(bytes.first(payload_end))) {
    throw Error(ErrorKind::checksum, "VSTRACE checksum mismatch");
  }

  const auto violations = validate_trace(t);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw Error(ErrorKind::validation, "invalid trace: " + v.field + format_index(v.index) +
                                           ": " + v.message);
  }
  return t;
}

std::size_t save_trace(const AttentionTrace& trace, std::ostream& sink) {
  const auto bytes = encode_trace(trace);
  sink.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw Error(ErrorKind::io, "failed writing trace");
  return bytes.size();
}

AttentionTrace load_trace(std::istream& source) {
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(source),
                                  std::istreambuf_iterator<char>()};
  if (source.bad()) throw Error(ErrorKind::io, "failed reading trace");
  return decode_trace(bytes);
}

void save_trace_file(const AttentionTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot open for writing: " + path);
  save_trace(trace, out);
}

AttentionTrace load_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open: " + path);
  return load_trace(in);
}

}  // namespace attrstream
