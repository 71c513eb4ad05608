#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hybridgen/tensor.hpp"

namespace hg {

enum class Task { Normal, Depth };

const char* task_name(Task task);
Task parse_task(const std::string& name);
inline std::size_t truth_channels(Task task) { return task == Task::Normal ? 3 : 1; }

// One generated training pair X = (image, ground truth).
struct Sample {
  Tensor image;               // H x W x 1, values in [0, 1]
  Tensor truth;               // H x W x 3 camera-space normals, or H x W x 1 depth
  std::vector<std::uint8_t> mask;  // H x W, 1 on foreground

  std::size_t height() const { return image.shape().at(0); }
  std::size_t width() const { return image.shape().at(1); }
  std::size_t foreground() const;
  bool all_miss() const { return foreground() == 0; }
  bool operator==(const Sample&) const = default;
};

// image entries followed by truth entries; the row layout of a Jacobian.
std::vector<double> flatten(const Sample& s);
std::size_t flat_size(const Sample& s);

// Container format: 8-byte little-endian header length, a compact JSON header
// (format, dtype, fields with shapes, per-sample byte offsets), then raw
// little-endian float64 arrays in field order: image, truth, mask (0/1).
void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(const std::filesystem::path& path);
inline void write_sample(const std::filesystem::path& path, const Sample& s) { write_samples(path, {s}); }
Sample read_sample(const std::filesystem::path& path);

// 8-bit previews for eyeballing.
void write_pgm(const std::filesystem::path& path, const Sample& s);
void write_normal_ppm(const std::filesystem::path& path, const Sample& s);

}  // namespace hg
