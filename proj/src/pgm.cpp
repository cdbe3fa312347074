#include "fraclens/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fraclens {

void write_pgm(const std::filesystem::path& path, const GrayImage& image, const std::vector<std::string>& comments) {
  if (image.pixels.size() != image.width * image.height) throw std::invalid_argument("PGM pixel count mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing: " + std::strerror(errno));
  os << "P5\n";
  for (const auto& c : comments) os << "# " << c << "\n";
  os << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      if (!tok.empty()) return tok;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string() + ": " + std::strerror(errno));
  if (header_token(is) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stoul(header_token(is));
    img.height = std::stoul(header_token(is));
    if (std::stoul(header_token(is)) != 255) throw std::runtime_error(path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  // header_token consumed the single whitespace byte after maxval
  img.pixels.resize(img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size())
    throw std::runtime_error(path.string() + ": truncated pixel data");
  return img;
}

GrayImage quantize_gray(std::span<const double> values, std::size_t width, std::size_t height) {
  if (values.size() != width * height) throw std::invalid_argument("quantize_gray: size mismatch");
  GrayImage img{width, height, std::vector<std::uint8_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor gray_to_tensor(const GrayImage& image, std::size_t channels) {
  Tensor t({channels, image.height, image.width});
  const std::size_t plane = image.width * image.height;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] = image.pixels[i] / 255.0;
  return t;
}

}  // namespace fraclens
