#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace owr {

/// Internal class identifier. Registry ids are dense and never reused.
enum class ClassId : std::int32_t {};

inline constexpr ClassId kUnknownClass{-1};

constexpr std::int32_t to_int(ClassId id) { return static_cast<std::int32_t>(id); }
constexpr ClassId class_id(std::int32_t v) { return ClassId{v}; }

inline std::string to_string(ClassId id) {
  return id == kUnknownClass ? std::string("UNKNOWN") : std::to_string(to_int(id));
}

using Embedding = Eigen::VectorXd;

}  // namespace owr
