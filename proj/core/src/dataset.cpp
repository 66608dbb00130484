#include "nseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "nseg/rng.hpp"

namespace nseg {

namespace {

constexpr const char* kMaskSuffix = "_mask";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void binarize_mask(Image& mask) {
  for (float& v : mask.pix) v = v >= 128.0f / 255.0f ? 1.0f : 0.0f;
}

struct Trig {
  double cos_a;
  double sin_a;
};

// exact values at multiples of 90 degrees keep those rotations lossless
Trig rotation_trig(double angle_deg) {
  if (std::fmod(angle_deg, 90.0) == 0.0) {
    const int q = static_cast<int>(std::llround(angle_deg / 90.0)) & 3;
    static constexpr double cos_q[4] = {1.0, 0.0, -1.0, 0.0};
    static constexpr double sin_q[4] = {0.0, 1.0, 0.0, -1.0};
    return {cos_q[q], sin_q[q]};
  }
  const double rad = angle_deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("not a directory: " + dir.string());
  }
  std::vector<std::string> image_stems;
  std::map<std::string, std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    const std::string stem = entry.path().stem().string();
    files[stem] = entry.path();
    if (!ends_with(stem, kMaskSuffix)) image_stems.push_back(stem);
  }
  std::sort(image_stems.begin(), image_stems.end());

  Dataset ds;
  ds.name = dir.filename().string();
  for (const std::string& stem : image_stems) {
    const auto mask_it = files.find(stem + kMaskSuffix);
    if (mask_it == files.end()) {
      throw DataError("no mask for image '" + stem + "' in " + dir.string());
    }
    Sample s;
    s.stem = stem;
    s.image = read_pgm(files[stem]);
    s.mask = read_pgm(mask_it->second);
    if (s.image.h != s.mask.h || s.image.w != s.mask.w) {
      throw DataError("image/mask size mismatch for '" + stem + "'");
    }
    binarize_mask(s.mask);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  for (const Sample& s : ds.samples) {
    if (s.stem.empty()) throw ContractError("save_dataset: sample without a stem");
    write_pgm(dir / (s.stem + ".pgm"), s.image);
    Image mask_out = s.mask;  // {0,1} -> {0,255} bytes via the 8-bit quantizer
    write_pgm(dir / (s.stem + kMaskSuffix + ".pgm"), mask_out);
  }
}

Sample rotate_pair(const Sample& sample, double angle_deg) {
  if (angle_deg < -180.0 || angle_deg > 180.0) {
    throw ContractError("rotation angle must lie in [-180, 180]");
  }
  const Image& src = sample.image;
  const int h = src.h, w = src.w;
  const auto [cos_a, sin_a] = rotation_trig(angle_deg);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

  Sample out;
  out.stem = sample.stem;
  out.prov = Provenance{Origin::augmented, angle_deg, sample.prov.source_index};
  out.image = Image(h, w);
  out.mask = Image(h, w);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + dx * cos_a - dy * sin_a;
      const double sy = cy + dx * sin_a + dy * cos_a;

      // image: bilinear with zero fill
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      auto img_at = [&](int yy, int xx) -> double {
        return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? src.at(yy, xx) : 0.0;
      };
      const double top = img_at(y0, x0) * (1.0 - fx) + img_at(y0, x0 + 1) * fx;
      const double bot = img_at(y0 + 1, x0) * (1.0 - fx) + img_at(y0 + 1, x0 + 1) * fx;
      out.image.at(y, x) = static_cast<float>(top * (1.0 - fy) + bot * fy);

      // mask: nearest neighbor under the same transform
      const int mx = static_cast<int>(std::floor(sx + 0.5));
      const int my = static_cast<int>(std::floor(sy + 0.5));
      out.mask.at(y, x) =
          (my >= 0 && my < h && mx >= 0 && mx < w) ? sample.mask.at(my, mx) : 0.0f;
    }
  }
  return out;
}

Dataset augment_dataset(const Dataset& ds, double range_deg, std::uint64_t seed) {
  if (ds.samples.empty()) throw ContractError("augment_dataset: empty dataset");
  Dataset out;
  out.name = ds.name;
  out.samples = ds.samples;  // originals verbatim, in order
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    SplitMix64 rng(substream(seed, i));
    const double angle = rng.uniform(-range_deg, range_deg);
    Sample aug = rotate_pair(ds.samples[i], angle);
    aug.prov.source_index = static_cast<int>(i);
    aug.stem = ds.samples[i].stem.empty() ? "" : ds.samples[i].stem + "_aug1";
    out.samples.push_back(std::move(aug));
  }
  return out;
}

Dataset synth_generate(int count, int size, std::uint64_t seed) {
  if (count < 1 || size < 4) throw ConfigError("synth_generate: need count >= 1 and size >= 4");
  Dataset ds;
  ds.name = "synth";
  for (int idx = 0; idx < count; ++idx) {
    SplitMix64 rng(substream(seed, static_cast<std::uint64_t>(idx)));
    Sample s;
    for (int attempt = 0; attempt < 100; ++attempt) {
      s.image = Image(size, size);
      s.mask = Image(size, size);
      const double base = rng.uniform(0.05, 0.2);
      for (float& v : s.image.pix) v = static_cast<float>(base + rng.uniform() * 0.1);

      const int n_ellipses = rng.coin() ? 2 : 1;
      for (int e = 0; e < n_ellipses; ++e) {
        const double ecy = rng.uniform(0.3, 0.7) * size;
        const double ecx = rng.uniform(0.3, 0.7) * size;
        const double a = rng.uniform(0.14, 0.26) * size;
        const double b = rng.uniform(0.14, 0.26) * size;
        const double phi = rng.uniform(0.0, std::numbers::pi);
        const double cp = std::cos(phi), sp = std::sin(phi);
        const double brightness = rng.uniform(0.65, 0.9);
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            const double u = (x - ecx) * cp + (y - ecy) * sp;
            const double v = -(x - ecx) * sp + (y - ecy) * cp;
            const double q = (u / a) * (u / a) + (v / b) * (v / b);
            if (q <= 1.0) {
              s.mask.at(y, x) = 1.0f;
              s.image.at(y, x) = static_cast<float>(brightness * (1.0 - 0.25 * q)) +
                                 0.05f * (s.image.at(y, x) - 0.15f);
            }
          }
        }
      }

      double fg = 0.0;
      for (const float v : s.mask.pix) fg += v;
      fg /= static_cast<double>(s.mask.pix.size());
      if (fg >= 0.05 && fg <= 0.6) break;
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth%04d", idx);
    s.stem = stem;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace nseg
