#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/tensor.hpp"

namespace ace {

// Truncated input files; distinct from structural FormatError.
struct LengthError : FormatError {
  explicit LengthError(const std::string& msg) : FormatError(msg) {}
};

// Raw images from an IDX file, scaled to [0,1].
struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<float> pixels;  // count * rows * cols
};

IdxImages load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

// Per-record ground-truth distortion metadata.
struct RecordMeta {
  double rotation_deg = 0.0;
  double tx = 0.0;  // pixels, horizontal
  double ty = 0.0;  // pixels, vertical
  double scale = 1.0;
  std::vector<std::array<int, 2>> clutter;   // canvas (x, y) placements
  std::array<double, 9> color_cast{1, 0, 0, 0, 1, 0, 0, 0, 1};
  bool has_color_cast = false;
};

// Dataset container.  Pixels are stored quantized to bytes so that fixed-seed
// generation is byte-identical; images() rescales to [0,1].
//
// On disk (all integers little-endian):
//   magic "ACDS", u16 version=1, u16 name_len, name bytes,
//   u8 channels, u16 height, u16 width, u64 count, u64 seed,
//   count*C*H*W pixel bytes.
// A plain-text sidecar at <path>.meta carries one line per record:
//   index label rotation tx ty scale n_clutter (x y)*n_clutter n_cast (v)*n_cast
struct Dataset {
  std::string name;
  std::size_t channels = 1, height = 0, width = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  std::vector<RecordMeta> meta;

  std::size_t count() const { return labels.size(); }
  std::size_t record_size() const { return channels * height * width; }

  std::vector<float> image(std::size_t i) const;

  // Batch [n, C, H, W] for record indices.
  Tensor<float> batch(const std::vector<std::size_t>& indices) const;

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

struct RtsOptions {
  std::size_t count = 0;  // 0: one record per source image
  bool zero_distortion = false;
};

// Appendix-B style rotated-translated-scaled digits on a 42x42 canvas:
// rotation U(-45,45) degrees, translation U(-7,7)^2 px, scale U(0.7,1.2).
Dataset gen_rts(const IdxImages& src, const std::vector<std::uint8_t>& labels,
                std::uint64_t seed, const RtsOptions& opt = {});

struct TcOptions {
  std::size_t count = 0;
  std::size_t clutter_pieces = 6;
  bool centered = false;  // fixed central placement (debug/identity case)
};

// Translated-cluttered digits on a 60x60 canvas with 6x6 clutter crops taken
// from other source images.
Dataset gen_tc(const IdxImages& src, const std::vector<std::uint8_t>& labels,
               std::uint64_t seed, const TcOptions& opt = {});

// Two-class colored shapes on 3x32x32 with a recorded row-stochastic color
// cast; desk-scale stand-in for color experiments.
Dataset gen_synth_rgb(std::uint64_t seed, std::size_t count);

// Forward affine map (normalized, pull semantics maps output to source) used
// by gen_rts; exposed so tests can replay metadata through the warp.
std::array<float, 6> rts_theta_from_meta(const RecordMeta& m,
                                         std::size_t canvas);
std::array<float, 6> rts_inverse_theta_from_meta(const RecordMeta& m,
                                                 std::size_t canvas);

// Centers src (28x28) on a canvas x canvas zero background.
std::vector<float> embed_centered(const float* src, std::size_t side,
                                  std::size_t canvas);

}  // namespace ace
