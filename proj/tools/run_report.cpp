// SPDX-License-Identifier: Apache-2.0
#include "run_report.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace hetplan::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 init failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

RunReport::RunReport(std::string command)
    : command_(std::move(command)), started_(std::chrono::steady_clock::now()) {}

void RunReport::add_input(const std::filesystem::path& path) { inputs_.push_back(path); }
void RunReport::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }
void RunReport::warn(const std::string& message) { warnings_.push_back(message); }

Json RunReport::to_json() const {
  auto files = [](const std::vector<std::filesystem::path>& paths) {
    Json arr = Json::array();
    for (const auto& p : paths) arr.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    return arr;
  };
  Json j;
  j["command"] = command_;
  j["inputs"] = files(inputs_);
  j["outputs"] = files(outputs_);
  if (seed_) j["seed"] = *seed_;
  j["warnings"] = warnings_;
  j["exit_code"] = exit_code_;
  for (const auto& [k, v] : extra_.items()) j[k] = v;
  j["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return j;
}

}  // namespace hetplan::cli
