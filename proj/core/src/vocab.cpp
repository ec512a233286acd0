#include "nest/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "nest/error.hpp"

namespace nest {

namespace {
const char* kReservedTokens[] = {"[PAD]", "[CLS]", "[MASK]", "[UNK]"};
}

Vocab::Vocab() {
  for (const char* t : kReservedTokens) push_token(t);
}

void Vocab::push_token(const std::string& token) {
  token_to_id_.emplace(token, static_cast<std::int32_t>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::string>& token_stream, std::size_t min_count) {
  if (token_stream.empty()) throw InputError("build_vocab: empty token stream");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : token_stream) ++counts[t];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  for (auto& [tok, n] : kept) v.push_token(tok);
  return v;
}

std::int32_t Vocab::encode(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::decode(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw EncodingError("vocab: id out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("vocab: cannot write " + path);
  for (const auto& t : id_to_token_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("vocab: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < kNumReserved) throw FormatError("vocab: file too short");
  for (int i = 0; i < kNumReserved; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kReservedTokens[i]) {
      throw FormatError("vocab: reserved token header mismatch");
    }
  }
  Vocab v;
  for (std::size_t i = kNumReserved; i < lines.size(); ++i) v.push_token(lines[i]);
  return v;
}

}  // namespace nest
