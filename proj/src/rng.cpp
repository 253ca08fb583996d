#include "imbpos/rng.hpp"

#include <cmath>
#include <numbers>

#include "imbpos/error.hpp"

namespace imbpos {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::RatioTooLarge: return "RatioTooLarge";
    case ErrorCode::BadGeometry: return "BadGeometry";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::TooManyTrials: return "TooManyTrials";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::DomainError, "Rng::below(0)");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Reject the short tail so every residue is equally likely.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw > limit);
  return static_cast<std::size_t>(draw % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(parent ^ h) + index);
}

}  // namespace imbpos
