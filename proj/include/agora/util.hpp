#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace util {

// --- errors ---------------------------------------------------------------

// A record in a dataset file violated the documented schema.
struct SchemaError : std::runtime_error {
  SchemaError(std::size_t record_index, std::string field, const std::string& what)
      : std::runtime_error("record " + std::to_string(record_index) + ", field '" + field +
                           "': " + what),
        record(record_index),
        field(std::move(field)) {}
  std::size_t record;
  std::string field;
};

// An iterative numeric procedure produced a non-finite value.
struct NumericError : std::runtime_error {
  NumericError(int step_index, const std::string& what)
      : std::runtime_error("step " + std::to_string(step_index) + ": " + what), step(step_index) {}
  int step;
};

// Training terminated without reaching its target; carries the final score.
struct TrainingFailed : std::runtime_error {
  TrainingFailed(double accuracy, const std::string& what)
      : std::runtime_error(what + " (final accuracy " + std::to_string(accuracy) + ")"),
        final_accuracy(accuracy) {}
  double final_accuracy;
};

// --- deterministic hashing / rng seeding ----------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent stream seed from a base seed and a label.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0) {
  return splitmix64(base ^ fnv1a64(label) ^ splitmix64(index + 0x1234));
}

// Map a u64 to [0,1).
inline double to_unit_interval(std::uint64_t x) { return double(x >> 11) * 0x1.0p-53; }

// --- misc -----------------------------------------------------------------

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_file_hex(const std::filesystem::path& path);

std::vector<std::string> split_ws(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string lower(std::string_view s);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace util
