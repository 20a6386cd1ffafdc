#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "segfuse/segfuse.hpp"

namespace segfuse::cli {

namespace fs = std::filesystem;

// Sorted stems of `*<suffix>` files in a directory.
inline std::vector<std::string> list_stems(const fs::path& dir, const std::string& suffix = ".png") {
  std::vector<std::string> out;
  for (const auto& f : fs::directory_iterator(dir)) {
    if (!f.is_regular_file()) continue;
    const auto name = f.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      out.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> list_subdirs(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& f : fs::directory_iterator(dir)) {
    if (f.is_directory()) out.push_back(f.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure by
// index is rethrown after all workers finish, so the outcome does not depend
// on the job count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const auto end = csv.find(',', pos);
    const auto piece = csv.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(piece, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (piece.empty() || used != piece.size()) {
      fail(ErrorCode::kInvalidArgument, "not a number list: '" + csv + "'");
    }
    out.push_back(v);
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return out;
}

inline std::set<ClassId> parse_class_ids(const std::string& csv) {
  std::set<ClassId> out;
  if (csv.empty()) return out;
  for (double v : parse_doubles(csv)) {
    if (v < 0 || v > 255 || v != static_cast<int>(v)) {
      fail(ErrorCode::kInvalidArgument, "class ids must be integers in 0..255");
    }
    out.insert(static_cast<ClassId>(v));
  }
  return out;
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Left-aligned first column, right-aligned rest.
inline void print_table(std::ostream& os, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return;
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto pad = std::string(width[i] - r[i].size(), ' ');
      if (i > 0) line += "  ";
      line += i == 0 ? r[i] + pad : pad + r[i];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
}

// Collects machine-readable records; written as JSON lines when a path is set.
class RecordSink {
 public:
  void add(nlohmann::json record) { records_.push_back(std::move(record)); }
  void write(const std::string& path) const {
    if (path.empty()) return;
    std::string out;
    for (const auto& r : records_) out += r.dump() + "\n";
    write_text(path, out);
  }

 private:
  std::vector<nlohmann::json> records_;
};

using Command = std::function<void()>;

void register_fusion_commands(CLI::App& app, Command& selected);
void register_eval_commands(CLI::App& app, Command& selected);
void register_dataset_commands(CLI::App& app, Command& selected);

}  // namespace segfuse::cli
