#include "nseg/image.hpp"

#include <cmath>
#include <fstream>

namespace nseg {

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string next_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw DataError("malformed PGM (unexpected end): " + path.string());
  return tok;
}

int parse_int(const std::string& tok, const std::filesystem::path& path) {
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw DataError("malformed PGM header token '" + tok + "': " + path.string());
  }
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  if (next_token(f, path) != "P5") throw DataError("not a binary PGM (P5): " + path.string());
  const int w = parse_int(next_token(f, path), path);
  const int h = parse_int(next_token(f, path), path);
  const int maxval = parse_int(next_token(f, path), path);
  if (w < 1 || h < 1 || maxval != 255) {
    throw DataError("unsupported PGM geometry/maxval: " + path.string());
  }
  // header tokenizer consumed the single whitespace after maxval
  Image img(h, w);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(f.gcount()) != raw.size()) {
    throw DataError("PGM pixel data truncated: " + path.string());
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.pix[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  if (img.h < 1 || img.w < 1 ||
      img.pix.size() != static_cast<std::size_t>(img.h) * static_cast<std::size_t>(img.w)) {
    throw ContractError("write_pgm: empty or inconsistent image");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write: " + path.string());
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> raw(img.pix.size());
  for (std::size_t i = 0; i < img.pix.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, img.pix[i]));
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw DataError("short write: " + path.string());
}

}  // namespace nseg
