#pragma once

// On-disk document store: <root>/<collection>/<id>/<version>.json.
// Writes go temp file -> fsync -> rename -> fsync(dir), so a reader never
// observes a torn document.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "polyglot/error.hpp"
#include "polyglot/ids.hpp"

namespace polyglot::store {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Collection { Fragments, Catalogs, Sessions, Rulepacks };

inline constexpr Collection kCollections[] = {Collection::Fragments, Collection::Catalogs, Collection::Sessions,
                                              Collection::Rulepacks};

inline constexpr std::string_view to_string(Collection c) {
  switch (c) {
    case Collection::Fragments: return "fragments";
    case Collection::Catalogs: return "catalogs";
    case Collection::Sessions: return "sessions";
    case Collection::Rulepacks: return "rulepacks";
  }
  return "?";
}

// Sessions are rewritten in place by their single writer; everything else is
// immutable per (id, version).
inline constexpr bool is_immutable(Collection c) { return c != Collection::Sessions; }

struct StoredDocument {
  Collection collection = Collection::Fragments;
  std::string id;
  int version = 1;
  std::string body;
  std::string updated_at;
};

enum class WritePhase { TempOpened, PartialWrite, TempSynced, Renamed };

using FaultHook = std::function<void(WritePhase, const fs::path& target)>;

// Ids become path components: [A-Za-z0-9._-], not starting with '.', at most 128 chars.
inline void check_id(std::string_view id) {
  const bool ok = !id.empty() && id.size() <= 128 && id.front() != '.' &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
                  });
  if (!ok) throw Error(Errc::BadRequest, "invalid document id '" + std::string(id) + "'", {{"id", std::string(id)}});
}

namespace detail {

[[noreturn]] inline void io_error(const std::string& what, const fs::path& p) {
  throw Error(Errc::IoError, what + " '" + p.string() + "': " + std::strerror(errno), {{"path", p.string()}});
}

inline void write_all(int fd, const char* data, std::size_t n, const fs::path& p) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      io_error("write failed", p);
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

inline void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) io_error("open directory failed", dir);
  ::fsync(fd);
  ::close(fd);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) io_error("read failed", p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string mtime(const fs::path& p) {
  struct stat st {};
  if (::stat(p.c_str(), &st) != 0) io_error("stat failed", p);
  return iso8601_utc(static_cast<std::uint64_t>(st.st_mtim.tv_sec) * 1000 +
                     static_cast<std::uint64_t>(st.st_mtim.tv_nsec / 1000000));
}

inline std::atomic<std::uint64_t>& temp_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

constexpr std::string_view kTempMarker = ".tmp.";

}  // namespace detail

// Replaces `target` with `bytes` atomically. The hook runs at each phase (tests
// use it to crash the writer mid-flight).
inline void atomic_write(const fs::path& target, std::string_view bytes, const FaultHook& hook = {}) {
  const fs::path dir = target.parent_path();
  const fs::path tmp = dir / ("." + target.filename().string() + std::string(detail::kTempMarker) +
                              std::to_string(::getpid()) + "." + std::to_string(++detail::temp_counter()));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) detail::io_error("create failed", tmp);
  try {
    if (hook) hook(WritePhase::TempOpened, target);
    const std::size_t half = bytes.size() / 2;
    detail::write_all(fd, bytes.data(), half, tmp);
    if (hook) hook(WritePhase::PartialWrite, target);
    detail::write_all(fd, bytes.data() + half, bytes.size() - half, tmp);
    if (::fsync(fd) != 0) detail::io_error("fsync failed", tmp);
    if (hook) hook(WritePhase::TempSynced, target);
  } catch (...) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), target.c_str()) != 0) {
    ::unlink(tmp.c_str());
    detail::io_error("rename failed", target);
  }
  if (hook) hook(WritePhase::Renamed, target);
  detail::fsync_dir(dir);
}

class DocumentStore {
 public:
  explicit DocumentStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    for (auto c : kCollections) {
      fs::create_directories(root_ / std::string(to_string(c)), ec);
      if (ec) throw Error(Errc::IoError, "cannot create store directory: " + ec.message(), {{"path", root_.string()}});
    }
    remove_stale_temps();
  }

  const fs::path& root() const { return root_; }

  void set_fault_hook(FaultHook hook) { hook_ = std::move(hook); }

  fs::path path_of(Collection c, const std::string& id, int version) const {
    return root_ / std::string(to_string(c)) / id / (std::to_string(version) + ".json");
  }

  struct PersistResult {
    StoredDocument document;
    bool created = false;  // false: identical bytes were already stored
  };

  // Immutable collections: same bytes are idempotent, different bytes raise
  // VersionConflict. Sessions: overwrite.
  PersistResult persist(Collection c, const std::string& id, int version, const std::string& body) {
    check_id(id);
    if (version < 1) throw Error(Errc::BadRequest, "version must be >= 1", {{"version", version}});
    const fs::path target = path_of(c, id, version);
    std::lock_guard lock(mu_);
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw Error(Errc::IoError, "cannot create directory: " + ec.message(), {{"path", target.string()}});
    if (is_immutable(c) && fs::exists(target)) {
      std::string existing = detail::read_file(target);
      if (existing != body) {
        throw Error(Errc::VersionConflict,
                    std::string(to_string(c)) + " '" + id + "' version " + std::to_string(version) +
                        " already exists with different content",
                    {{"collection", std::string(to_string(c))}, {"id", id}, {"version", version}});
      }
      return {{c, id, version, std::move(existing), detail::mtime(target)}, false};
    }
    atomic_write(target, body, hook_);
    return {{c, id, version, body, detail::mtime(target)}, true};
  }

  std::vector<int> versions(Collection c, const std::string& id) const {
    check_id(id);
    std::vector<int> out;
    const fs::path dir = root_ / std::string(to_string(c)) / id;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.empty() || name.front() == '.' || entry.path().extension() != ".json") continue;
      try {
        std::size_t used = 0;
        const int v = std::stoi(entry.path().stem().string(), &used);
        if (used == entry.path().stem().string().size() && v >= 1) out.push_back(v);
      } catch (const std::exception&) {
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  bool contains(Collection c, const std::string& id, std::optional<int> version = std::nullopt) const {
    const auto vs = versions(c, id);
    if (!version) return !vs.empty();
    return std::find(vs.begin(), vs.end(), *version) != vs.end();
  }

  // Latest version when none is given.
  StoredDocument fetch(Collection c, const std::string& id, std::optional<int> version = std::nullopt) const {
    const auto vs = versions(c, id);
    const bool found = version ? std::find(vs.begin(), vs.end(), *version) != vs.end() : !vs.empty();
    if (!found) {
      json detail = {{"collection", std::string(to_string(c))}, {"id", id}};
      if (version) detail["version"] = *version;
      throw Error(Errc::NotFound,
                  std::string(to_string(c)) + " '" + id + "'" +
                      (version ? " version " + std::to_string(*version) : std::string()) + " not found",
                  detail);
    }
    const int v = version.value_or(vs.back());
    const fs::path p = path_of(c, id, v);
    return {c, id, v, detail::read_file(p), detail::mtime(p)};
  }

  std::vector<std::string> ids(Collection c) const {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(root_ / std::string(to_string(c)))) {
      const std::string name = entry.path().filename().string();
      if (entry.is_directory() && !name.empty() && name.front() != '.') out.push_back(name);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Latest version of every id, ordered by id.
  std::vector<StoredDocument> list(Collection c) const {
    std::vector<StoredDocument> out;
    for (const auto& id : ids(c)) {
      if (!versions(c, id).empty()) out.push_back(fetch(c, id));
    }
    return out;
  }

  // Every stored version of every id, ordered by (id, version).
  std::vector<StoredDocument> list_all_versions(Collection c) const {
    std::vector<StoredDocument> out;
    for (const auto& id : ids(c)) {
      for (int v : versions(c, id)) out.push_back(fetch(c, id, v));
    }
    return out;
  }

 private:
  void remove_stale_temps() {
    for (const auto& entry : fs::recursive_directory_iterator(root_)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.front() == '.' && name.find(detail::kTempMarker) != std::string::npos) {
        std::error_code ec;
        fs::remove(entry.path(), ec);
      }
    }
  }

  fs::path root_;
  FaultHook hook_;
  std::mutex mu_;
};

}  // namespace polyglot::store
