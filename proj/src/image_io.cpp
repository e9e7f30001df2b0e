#include "ace/image_io.hpp"

#include <cmath>
#include <fstream>

#include "ace/errors.hpp"

namespace ace {

void write_pnm(const PnmImage& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw ContractError("pnm supports 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("pnm: cannot write " + path);
  os << (img.channels == 1 ? "P5" : "P6") << "\n"
     << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
}

PnmImage read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("pnm: cannot open " + path);
  std::string magic;
  is >> magic;
  PnmImage img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw FormatError("pnm: unsupported magic '" + magic + "' in " + path);
  std::size_t maxval;
  is >> img.width >> img.height >> maxval;
  if (!is || maxval != 255) throw FormatError("pnm: bad header in " + path);
  is.get();  // single whitespace after header
  img.pixels.resize(img.channels * img.height * img.width);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size())
    throw FormatError("pnm: truncated payload in " + path);
  return img;
}

PnmImage tile_images(const std::vector<std::vector<float>>& images,
                     std::size_t channels, std::size_t height,
                     std::size_t width, std::size_t cols) {
  if (images.empty()) throw ContractError("tile_images: empty image list");
  if (cols == 0) cols = images.size();
  std::size_t rows = (images.size() + cols - 1) / cols;
  std::size_t out_h = rows * height + (rows - 1);
  std::size_t out_w = cols * width + (cols - 1);
  PnmImage out;
  out.channels = channels;
  out.height = out_h;
  out.width = out_w;
  out.pixels.assign(channels * out_h * out_w, 0);
  for (std::size_t n = 0; n < images.size(); ++n) {
    std::size_t tr = n / cols, tc = n % cols;
    std::size_t y0 = tr * (height + 1), x0 = tc * (width + 1);
    const std::vector<float>& src = images[n];
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < channels; ++c) {
          float v = src[c * height * width + y * width + x];
          v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
          out.pixels[((y0 + y) * out_w + (x0 + x)) * channels + c] =
              static_cast<std::uint8_t>(std::lround(v * 255.f));
        }
  }
  return out;
}

std::vector<std::vector<float>> split_batch(const Tensor<float>& batch) {
  if (batch.rank() != 4) throw ShapeError("split_batch expects [B,C,H,W]");
  std::size_t B = batch.shape()[0];
  std::size_t rs = batch.size() / B;
  std::vector<std::vector<float>> out(B);
  const float* p = batch.data();
  for (std::size_t b = 0; b < B; ++b)
    out[b].assign(p + b * rs, p + (b + 1) * rs);
  return out;
}

}  // namespace ace
