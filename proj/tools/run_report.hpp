// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hetplan/json_io.hpp"

namespace hetplan::cli {

std::string sha256_file(const std::filesystem::path& path);

// One per invocation: what was read, what was written, and anything the
// user should know about.
class RunReport {
 public:
  explicit RunReport(std::string command);

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void warn(const std::string& message);
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_exit_code(int code) { exit_code_ = code; }
  void set(const std::string& key, Json value) { extra_[key] = std::move(value); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  Json to_json() const;

 private:
  std::string command_;
  std::vector<std::filesystem::path> inputs_, outputs_;
  std::vector<std::string> warnings_;
  std::optional<std::uint64_t> seed_;
  int exit_code_ = 0;
  Json extra_ = Json::object();
  std::chrono::steady_clock::time_point started_;
};

}  // namespace hetplan::cli
