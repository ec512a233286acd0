#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace nest {

// Token <-> id map with four reserved ids at the front. The reserved ids are
// fixed for the life of the artifact; every serialized grid depends on them.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kCls = 1;
  static constexpr std::int32_t kMask = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kNumReserved = 4;

  Vocab();

  // Tokens with count >= min_count enter after the reserved ids, ordered by
  // descending count then lexicographic. Empty stream is an error.
  static Vocab build(const std::vector<std::string>& token_stream, std::size_t min_count);

  std::int32_t encode(const std::string& token) const;  // kUnk when absent
  const std::string& decode(std::int32_t id) const;
  bool contains(const std::string& token) const;
  std::size_t size() const { return id_to_token_.size(); }

  static bool is_special(std::int32_t id) { return id >= 0 && id < kNumReserved; }

  // One token per line; the first four lines are the reserved tokens.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;

  void push_token(const std::string& token);
};

}  // namespace nest
