#include <spdlog/spdlog.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "diffcal/gateway.hpp"

namespace diffcal::llm {

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();
    std::size_t pos = 0, line_no = 0, good_end = 0;
    while (pos < data.size()) {
      const auto nl = data.find('\n', pos);
      ++line_no;
      if (nl == std::string::npos) {
        // A write interrupted mid-line; drop it so the next append starts clean.
        spdlog::warn("response cache {}: discarding torn trailing line {}", path_.string(), line_no);
        break;
      }
      const std::string_view line(data.data() + pos, nl - pos);
      if (!line.empty()) {
        try {
          const auto j = nlohmann::json::parse(line);
          const auto key = j.at("key").get<std::string>();
          entries_[key] = j.at("response").dump();
          deserialize_response(entries_[key]);
        } catch (const std::exception& e) {
          throw CacheCorruptionError("response cache " + path_.string() + " line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
      }
      pos = nl + 1;
      good_end = pos;
    }
    if (good_end < data.size()) std::filesystem::resize_file(path_, good_end);
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw std::runtime_error("cannot open response cache " + path_.string());
}

std::optional<CompletionResponse> ResponseCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return deserialize_response(it->second);
}

void ResponseCache::put(const std::string& key, const CompletionResponse& response) {
  const std::string payload = serialize(response);
  std::lock_guard lock(mu_);
  if (entries_.count(key)) return;
  entries_[key] = payload;
  if (out_.is_open()) {
    nlohmann::ordered_json line;
    line["key"] = key;
    line["response"] = nlohmann::ordered_json::parse(payload);
    out_ << line.dump() << '\n';
    out_.flush();
  }
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

CompletionResponse CachedBackend::complete(const ChatRequest& request) {
  const std::string key = request_key(request);
  if (auto hit = cache_.get(key)) {
    std::lock_guard lock(mu_);
    ++hits_;
    return *hit;
  }
  CompletionResponse r = inner_.complete(request);
  cache_.put(key, r);
  std::lock_guard lock(mu_);
  ++misses_;
  return r;
}

std::size_t CachedBackend::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}
std::size_t CachedBackend::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

}  // namespace diffcal::llm
