#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace psmedit::io {

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never observe
/// a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Canonical single-line JSON used for every JSONL record.
std::string dump_line(const nlohmann::json& j);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

/// Append-only JSONL sink. Each record is flushed on write.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path, bool truncate = false);
  void append(const nlohmann::json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace psmedit::io
