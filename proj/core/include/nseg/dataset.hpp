#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nseg/image.hpp"

namespace nseg {

enum class Origin : std::uint8_t { original, augmented };

struct Provenance {
  Origin origin = Origin::original;
  double angle_deg = 0.0;  // augmented only; full precision so the rotation is replayable
  int source_index = -1;   // augmented only: index of the source sample
};

/// Paired grayscale image and binary mask of equal shape.
struct Sample {
  Image image;
  Image mask;
  Provenance prov{};
  std::string stem;
};

struct Dataset {
  std::string name;
  std::vector<Sample> samples;

  int size() const { return static_cast<int>(samples.size()); }
};

/// Loads `<stem>.pgm` / `<stem>_mask.pgm` pairs, ordered by stem. Mask pixels
/// >= 128 map to 1. A missing mask or a size mismatch raises DataError
/// naming the stem.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the dataset back in the same pairing convention.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// Rotates image (bilinear) and mask (nearest) about the center with one
/// shared transform; out-of-bounds pixels become 0. Multiples of 90 degrees
/// use exact trig so square images permute without interpolation loss.
Sample rotate_pair(const Sample& sample, double angle_deg);

/// Appends one rotated copy per original, angle uniform in [-range, range]
/// from the per-sample substream of `seed`. Output size is exactly double.
Dataset augment_dataset(const Dataset& ds, double range_deg, std::uint64_t seed);

/// Synthetic desk-scale dataset: noisy background with 1-2 bright elliptical
/// regions; the mask is the exact ellipse interior. Foreground fraction is
/// kept within [0.05, 0.6] by redrawing.
Dataset synth_generate(int count, int size, std::uint64_t seed);

}  // namespace nseg
