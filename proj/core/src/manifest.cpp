#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>

#include "diffcal/digest.hpp"
#include "diffcal/pipeline.hpp"

namespace diffcal::pipeline {
namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::calibrate: return "calibrate";
    case Stage::sample: return "sample";
    case Stage::elicit: return "elicit";
    case Stage::fit: return "fit";
    case Stage::analyze: return "analyze";
    case Stage::report: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (auto st : kAllStages)
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

Manifest Manifest::load(const std::filesystem::path& output_dir) {
  Manifest m;
  m.dir_ = output_dir;
  const auto path = output_dir / "manifest.json";
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    try {
      m.j_ = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw StagePreconditionError("manifest " + path.string() + " is unreadable (" + e.what() +
                                   "); remove it and rerun from ingest");
    }
  }
  if (!m.j_.is_object()) m.j_ = nlohmann::ordered_json::object();
  if (!m.j_.contains("stages")) m.j_["stages"] = nlohmann::ordered_json::object();
  return m;
}

void Manifest::save() const {
  std::filesystem::create_directories(dir_);
  const auto path = dir_ / "manifest.json";
  const auto tmp = dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j_.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::optional<std::string> Manifest::fingerprint(Stage s) const {
  const auto& st = j_["stages"];
  const auto key = std::string(to_string(s));
  if (!st.contains(key) || !st[key].contains("fingerprint")) return std::nullopt;
  return st[key]["fingerprint"].get<std::string>();
}

std::map<std::string, std::string> Manifest::artifacts(Stage s) const {
  std::map<std::string, std::string> out;
  const auto& st = j_["stages"];
  const auto key = std::string(to_string(s));
  if (!st.contains(key) || !st[key].contains("artifacts")) return out;
  for (const auto& [k, v] : st[key]["artifacts"].items()) out[k] = v.get<std::string>();
  return out;
}

bool Manifest::artifacts_intact(Stage s) const {
  const auto arts = artifacts(s);
  if (arts.empty()) return false;
  for (const auto& [rel, digest] : arts) {
    const auto p = dir_ / rel;
    if (!std::filesystem::exists(p) || sha256_file(p) != digest) return false;
  }
  return true;
}

void Manifest::record(Stage s, const std::string& fingerprint, const std::vector<std::string>& artifact_paths,
                      bool skipped) {
  nlohmann::ordered_json st;
  st["fingerprint"] = fingerprint;
  st["completed_at"] = utc_now();
  st["last_action"] = skipped ? "skipped" : "ran";
  nlohmann::ordered_json arts = nlohmann::ordered_json::object();
  for (const auto& rel : artifact_paths) arts[rel] = sha256_file(dir_ / rel);
  st["artifacts"] = arts;
  j_["stages"][std::string(to_string(s))] = st;
}

void Manifest::mark_skipped(Stage s) {
  auto& st = j_["stages"][std::string(to_string(s))];
  st["last_action"] = "skipped";
  st["last_checked_at"] = utc_now();
}

void Manifest::forget(Stage s) { j_["stages"].erase(std::string(to_string(s))); }

OutputLock::OutputLock(const std::filesystem::path& output_dir) {
  std::filesystem::create_directories(output_dir);
  const auto path = output_dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw std::runtime_error("another run holds the lock on " + output_dir.string());
  }
}

OutputLock::~OutputLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const elicit::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const StagePreconditionError*>(&e)) return 3;
  if (dynamic_cast<const llm::GatewayError*>(&e) || dynamic_cast<const elicit::CampaignInterrupted*>(&e)) return 4;
  return 1;
}

}  // namespace diffcal::pipeline
