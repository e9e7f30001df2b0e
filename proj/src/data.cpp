#include "ace/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ace/rng.hpp"
#include "ace/warp.hpp"

namespace ace {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw LengthError(std::string("idx: truncated reading ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::uint8_t quantize(float v) {
  float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

template <class T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_le(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw LengthError(std::string("dataset: truncated reading ") + what);
  return v;
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("idx: cannot open " + path);
  std::uint32_t magic = read_be32(is, "magic");
  if (magic != kIdxImageMagic)
    throw FormatError("idx: bad image magic " + hex32(magic) + " in " + path +
                      " (expected " + hex32(kIdxImageMagic) + ")");
  IdxImages out;
  out.count = read_be32(is, "count");
  out.rows = read_be32(is, "rows");
  out.cols = read_be32(is, "cols");
  std::size_t n = out.count * out.rows * out.cols;
  std::vector<std::uint8_t> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw LengthError("idx: image payload truncated in " + path);
  out.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("idx: cannot open " + path);
  std::uint32_t magic = read_be32(is, "magic");
  if (magic != kIdxLabelMagic)
    throw FormatError("idx: bad label magic " + hex32(magic) + " in " + path +
                      " (expected " + hex32(kIdxLabelMagic) + ")");
  std::uint32_t count = read_be32(is, "count");
  std::vector<std::uint8_t> labels(count);
  is.read(reinterpret_cast<char*>(labels.data()), count);
  if (static_cast<std::size_t>(is.gcount()) != count)
    throw LengthError("idx: label payload truncated in " + path);
  return labels;
}

// ---------------------------------------------------------------------------

std::vector<float> Dataset::image(std::size_t i) const {
  std::size_t rs = record_size();
  std::vector<float> out(rs);
  const std::uint8_t* p = pixels.data() + i * rs;
  for (std::size_t j = 0; j < rs; ++j)
    out[j] = static_cast<float>(p[j]) / 255.0f;
  return out;
}

Tensor<float> Dataset::batch(const std::vector<std::size_t>& indices) const {
  std::size_t rs = record_size();
  std::vector<float> out(indices.size() * rs);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::uint8_t* p = pixels.data() + indices[k] * rs;
    for (std::size_t j = 0; j < rs; ++j)
      out[k * rs + j] = static_cast<float>(p[j]) / 255.0f;
  }
  return Tensor<float>::from({indices.size(), channels, height, width},
                             std::move(out));
}

void Dataset::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("dataset: cannot write " + path);
  os.write("ACDS", 4);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(channels));
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(height));
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(width));
  write_le<std::uint64_t>(os, count());
  write_le<std::uint64_t>(os, seed);
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));

  std::ofstream ms(path + ".meta");
  if (!ms) throw FormatError("dataset: cannot write " + path + ".meta");
  char buf[64];
  for (std::size_t i = 0; i < count(); ++i) {
    const RecordMeta& m = meta[i];
    ms << i << ' ' << int(labels[i]);
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      ms << buf;
    };
    num(m.rotation_deg);
    num(m.tx);
    num(m.ty);
    num(m.scale);
    ms << ' ' << m.clutter.size();
    for (const auto& c : m.clutter) ms << ' ' << c[0] << ' ' << c[1];
    if (m.has_color_cast) {
      ms << ' ' << 9;
      for (double v : m.color_cast) num(v);
    } else {
      ms << ' ' << 0;
    }
    ms << '\n';
  }
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dataset: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ACDS", 4) != 0)
    throw FormatError("dataset: bad magic in " + path);
  std::uint16_t version = read_le<std::uint16_t>(is, "version");
  if (version != 1)
    throw FormatError("dataset: unsupported version " +
                      std::to_string(version));
  std::uint16_t name_len = read_le<std::uint16_t>(is, "name length");
  Dataset d;
  d.name.resize(name_len);
  is.read(d.name.data(), name_len);
  if (!is) throw LengthError("dataset: truncated name");
  d.channels = read_le<std::uint8_t>(is, "channels");
  d.height = read_le<std::uint16_t>(is, "height");
  d.width = read_le<std::uint16_t>(is, "width");
  std::uint64_t cnt = read_le<std::uint64_t>(is, "count");
  d.seed = read_le<std::uint64_t>(is, "seed");
  d.pixels.resize(cnt * d.record_size());
  is.read(reinterpret_cast<char*>(d.pixels.data()),
          static_cast<std::streamsize>(d.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != d.pixels.size())
    throw LengthError("dataset: truncated pixels in " + path);

  std::ifstream ms(path + ".meta");
  if (!ms) throw FormatError("dataset: missing sidecar " + path + ".meta");
  d.labels.resize(cnt);
  d.meta.resize(cnt);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t idx;
    int label;
    RecordMeta m;
    std::size_t nc = 0, ncast = 0;
    ls >> idx >> label >> m.rotation_deg >> m.tx >> m.ty >> m.scale >> nc;
    m.clutter.resize(nc);
    for (auto& c : m.clutter) ls >> c[0] >> c[1];
    ls >> ncast;
    if (ncast == 9) {
      for (double& v : m.color_cast) ls >> v;
      m.has_color_cast = true;
    }
    if (!ls || idx >= cnt)
      throw FormatError("dataset: bad sidecar line: " + line);
    d.labels[idx] = static_cast<std::uint8_t>(label);
    d.meta[idx] = std::move(m);
    ++rows;
  }
  if (rows != cnt)
    throw LengthError("dataset: sidecar has " + std::to_string(rows) +
                      " rows, expected " + std::to_string(cnt));
  return d;
}

// ---------------------------------------------------------------------------

std::vector<float> embed_centered(const float* src, std::size_t side,
                                  std::size_t canvas) {
  std::vector<float> out(canvas * canvas, 0.f);
  std::size_t off = (canvas - side) / 2;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j)
      out[(i + off) * canvas + (j + off)] = src[i * side + j];
  return out;
}

// Pull-semantics theta for the map "scale by s, rotate by r about the canvas
// center, translate by (tx, ty) px", in normalized coordinates.
std::array<float, 6> rts_theta_from_meta(const RecordMeta& m,
                                         std::size_t canvas) {
  double r = m.rotation_deg * M_PI / 180.0;
  double cs = std::cos(r), sn = std::sin(r);
  double half = (static_cast<double>(canvas) - 1.0) / 2.0;
  double tnx = m.tx / half, tny = m.ty / half;
  // A = (1/s) R(-r); b = -A t
  double a00 = cs / m.scale, a01 = sn / m.scale;
  double a10 = -sn / m.scale, a11 = cs / m.scale;
  return {static_cast<float>(a00),
          static_cast<float>(a01),
          static_cast<float>(-(a00 * tnx + a01 * tny)),
          static_cast<float>(a10),
          static_cast<float>(a11),
          static_cast<float>(-(a10 * tnx + a11 * tny))};
}

std::array<float, 6> rts_inverse_theta_from_meta(const RecordMeta& m,
                                                 std::size_t canvas) {
  double r = m.rotation_deg * M_PI / 180.0;
  double cs = std::cos(r), sn = std::sin(r);
  double half = (static_cast<double>(canvas) - 1.0) / 2.0;
  double tnx = m.tx / half, tny = m.ty / half;
  // Inverse map: A = s R(r); b = t
  return {static_cast<float>(m.scale * cs),
          static_cast<float>(-m.scale * sn),
          static_cast<float>(tnx),
          static_cast<float>(m.scale * sn),
          static_cast<float>(m.scale * cs),
          static_cast<float>(tny)};
}

Dataset gen_rts(const IdxImages& src, const std::vector<std::uint8_t>& labels,
                std::uint64_t seed, const RtsOptions& opt) {
  if (src.rows != 28 || src.cols != 28)
    throw ContractError("gen_rts expects 28x28 sources, got " +
                        std::to_string(src.rows) + "x" +
                        std::to_string(src.cols));
  if (src.count == 0 || labels.size() != src.count)
    throw ContractError("gen_rts: label count does not match image count");
  constexpr std::size_t kCanvas = 42;
  std::size_t count = opt.count ? opt.count : src.count;

  Dataset d;
  d.name = "rts-mnist";
  d.channels = 1;
  d.height = d.width = kCanvas;
  d.seed = seed;
  d.pixels.resize(count * kCanvas * kCanvas);
  d.labels.resize(count);
  d.meta.resize(count);

  for (std::size_t i = 0; i < count; ++i) {
    std::size_t s = i % src.count;
    CounterRng rng(CounterRng::derive(seed, i));
    RecordMeta m;
    if (!opt.zero_distortion) {
      m.rotation_deg = rng.uniform(-45.0, 45.0);
      m.tx = rng.uniform(-7.0, 7.0);
      m.ty = rng.uniform(-7.0, 7.0);
      m.scale = rng.uniform(0.7, 1.2);
    }
    std::vector<float> canvas =
        embed_centered(src.pixels.data() + s * 28 * 28, 28, kCanvas);
    std::vector<float> warped;
    if (opt.zero_distortion) {
      warped = std::move(canvas);
    } else {
      auto th = rts_theta_from_meta(m, kCanvas);
      Tensor<float> img =
          Tensor<float>::from({1, 1, kCanvas, kCanvas}, std::move(canvas));
      AffineParams theta{Tensor<float>::from(
          {1, 2, 3}, std::vector<float>(th.begin(), th.end()))};
      Tensor<float> out = warp_affine(img, theta, kCanvas, kCanvas);
      warped.assign(out.values().begin(), out.values().end());
    }
    std::uint8_t* dst = d.pixels.data() + i * kCanvas * kCanvas;
    for (std::size_t j = 0; j < warped.size(); ++j) dst[j] = quantize(warped[j]);
    d.labels[i] = labels[s];
    d.meta[i] = std::move(m);
  }
  return d;
}

Dataset gen_tc(const IdxImages& src, const std::vector<std::uint8_t>& labels,
               std::uint64_t seed, const TcOptions& opt) {
  if (src.rows != 28 || src.cols != 28)
    throw ContractError("gen_tc expects 28x28 sources");
  if (src.count < 2)
    throw ContractError("gen_tc needs at least 2 source images for clutter");
  if (labels.size() != src.count)
    throw ContractError("gen_tc: label count does not match image count");
  constexpr std::size_t kCanvas = 60;
  constexpr std::size_t kPatch = 6;
  std::size_t count = opt.count ? opt.count : src.count;

  Dataset d;
  d.name = "tc-mnist";
  d.channels = 1;
  d.height = d.width = kCanvas;
  d.seed = seed;
  d.pixels.resize(count * kCanvas * kCanvas);
  d.labels.resize(count);
  d.meta.resize(count);

  const std::size_t kMaxOff = kCanvas - 28;       // 32
  const std::size_t kMaxPatchSrc = 28 - kPatch;   // 22
  const std::size_t kMaxPatchDst = kCanvas - kPatch;

  for (std::size_t i = 0; i < count; ++i) {
    std::size_t s = i % src.count;
    CounterRng rng(CounterRng::derive(seed, i));
    std::vector<float> canvas(kCanvas * kCanvas, 0.f);
    RecordMeta m;

    std::size_t ox, oy;
    if (opt.centered) {
      ox = oy = (kCanvas - 28) / 2;
    } else {
      ox = rng.next_below(kMaxOff + 1);
      oy = rng.next_below(kMaxOff + 1);
    }
    m.tx = static_cast<double>(ox) - (kCanvas - 28) / 2.0;
    m.ty = static_cast<double>(oy) - (kCanvas - 28) / 2.0;
    const float* digit = src.pixels.data() + s * 28 * 28;
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c)
        canvas[(oy + r) * kCanvas + (ox + c)] += digit[r * 28 + c];

    for (std::size_t k = 0; k < opt.clutter_pieces; ++k) {
      std::size_t other = rng.next_below(src.count - 1);
      if (other >= s) ++other;
      std::size_t px = rng.next_below(kMaxPatchSrc + 1);
      std::size_t py = rng.next_below(kMaxPatchSrc + 1);
      std::size_t cx = rng.next_below(kMaxPatchDst + 1);
      std::size_t cy = rng.next_below(kMaxPatchDst + 1);
      const float* op = src.pixels.data() + other * 28 * 28;
      for (std::size_t r = 0; r < kPatch; ++r)
        for (std::size_t c = 0; c < kPatch; ++c)
          canvas[(cy + r) * kCanvas + (cx + c)] +=
              op[(py + r) * 28 + (px + c)];
      m.clutter.push_back({static_cast<int>(cx), static_cast<int>(cy)});
    }

    std::uint8_t* dst = d.pixels.data() + i * kCanvas * kCanvas;
    for (std::size_t j = 0; j < canvas.size(); ++j) dst[j] = quantize(canvas[j]);
    d.labels[i] = labels[s];
    d.meta[i] = std::move(m);
  }
  return d;
}

Dataset gen_synth_rgb(std::uint64_t seed, std::size_t count) {
  constexpr std::size_t kSide = 32;
  Dataset d;
  d.name = "synth-rgb";
  d.channels = 3;
  d.height = d.width = kSide;
  d.seed = seed;
  d.pixels.resize(count * 3 * kSide * kSide);
  d.labels.resize(count);
  d.meta.resize(count);

  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(CounterRng::derive(seed, i));
    std::uint8_t cls = static_cast<std::uint8_t>(i % 2);
    double bg[3], fg[3];
    for (double& v : bg) v = rng.uniform(0.05, 0.45);
    for (double& v : fg) v = rng.uniform(0.55, 0.95);
    double cx = rng.uniform(10.0, 22.0);
    double cy = rng.uniform(10.0, 22.0);
    double rad = rng.uniform(5.0, 10.0);

    std::vector<float> img(3 * kSide * kSide);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < kSide * kSide; ++p)
        img[c * kSide * kSide + p] = static_cast<float>(bg[c]);
    for (std::size_t y = 0; y < kSide; ++y)
      for (std::size_t x = 0; x < kSide; ++x) {
        bool inside;
        if (cls == 0) {
          double dx = x - cx, dy = y - cy;
          inside = dx * dx + dy * dy <= rad * rad;
        } else {
          inside = std::abs(x - cx) <= rad && std::abs(y - cy) <= rad;
        }
        if (inside)
          for (std::size_t c = 0; c < 3; ++c)
            img[c * kSide * kSide + y * kSide + x] = static_cast<float>(fg[c]);
      }

    // Diagonally dominant row-stochastic cast: (1-alpha) I + alpha U.
    RecordMeta m;
    m.has_color_cast = true;
    m.tx = cx - (kSide - 1) / 2.0;
    m.ty = cy - (kSide - 1) / 2.0;
    m.scale = rad;
    double alpha = rng.uniform(0.0, 0.4);
    for (int r = 0; r < 3; ++r) {
      double u[3], s = 0.0;
      for (double& v : u) {
        v = rng.uniform(0.05, 1.0);
        s += v;
      }
      for (int c = 0; c < 3; ++c)
        m.color_cast[r * 3 + c] = alpha * u[c] / s + (r == c ? 1 - alpha : 0.0);
    }

    std::uint8_t* dst = d.pixels.data() + i * 3 * kSide * kSide;
    for (std::size_t p = 0; p < kSide * kSide; ++p) {
      double in[3], out[3];
      for (int c = 0; c < 3; ++c) in[c] = img[c * kSide * kSide + p];
      for (int r = 0; r < 3; ++r)
        out[r] = m.color_cast[r * 3 + 0] * in[0] +
                 m.color_cast[r * 3 + 1] * in[1] +
                 m.color_cast[r * 3 + 2] * in[2];
      for (int c = 0; c < 3; ++c)
        dst[c * kSide * kSide + p] = quantize(static_cast<float>(out[c]));
    }
    d.labels[i] = cls;
    d.meta[i] = std::move(m);
  }
  return d;
}

}  // namespace ace
