#include "nest/seqset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

using json = nlohmann::json;

std::size_t SeqSet::num_valid_sets() const {
  std::size_t k = 0;
  for (auto v : set_valid) k += v;
  return k;
}

void validate_seqset(const SeqSet& s) {
  if (s.m == 0 || s.n < 2) throw InputError("seqset: m >= 1 and n >= 2 required");
  if (s.tokens.size() != s.m * s.n || s.token_valid.size() != s.m * s.n ||
      s.set_times.size() != s.m || s.set_valid.size() != s.m) {
    throw InputError("seqset: field sizes inconsistent with (m, n)");
  }
  double prev_time = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.m; ++i) {
    if (s.set_valid[i]) {
      if (s.set_times[i] < prev_time) throw InputError("seqset: set times decrease");
      prev_time = s.set_times[i];
      if (s.token(i, 0) != Vocab::kCls) throw InputError("seqset: valid set missing [CLS]");
      if (!s.token_valid[i * s.n]) throw InputError("seqset: [CLS] slot marked invalid");
    }
    for (std::size_t j = 0; j < s.n; ++j) {
      const bool valid = s.token_valid[i * s.n + j];
      const std::int32_t id = s.token(i, j);
      if (!s.set_valid[i] && valid) throw InputError("seqset: token valid in invalid set");
      if (!valid && id != Vocab::kPad) throw InputError("seqset: invalid slot must hold [PAD]");
      if (valid && id == Vocab::kPad) throw InputError("seqset: valid slot holds [PAD]");
    }
  }
}

SeqSet pad_truncate(const RawSubject& raw, const Vocab& vocab, std::size_t n, std::size_t m) {
  if (n < 2 || m < 1) throw ConfigError("pad_truncate: need n >= 2 and m >= 1");
  if (raw.sets.empty()) throw InputError("pad_truncate: subject has no sets");
  for (std::size_t i = 1; i < raw.sets.size(); ++i) {
    if (raw.sets[i].time < raw.sets[i - 1].time) {
      throw InputError("pad_truncate: raw set times must be sorted");
    }
  }

  SeqSet out;
  out.subject_id = raw.subject_id;
  out.m = m;
  out.n = n;
  out.tokens.assign(m * n, Vocab::kPad);
  out.token_valid.assign(m * n, 0);
  out.set_times.assign(m, 0.0);
  out.set_valid.assign(m, 0);

  // Most recent m sets survive sequence truncation.
  const std::size_t first = raw.sets.size() > m ? raw.sets.size() - m : 0;
  for (std::size_t i = first; i < raw.sets.size(); ++i) {
    const std::size_t row = i - first;
    const RawSet& src = raw.sets[i];
    out.set_valid[row] = 1;
    out.set_times[row] = src.time;
    out.tokens[row * n] = Vocab::kCls;
    out.token_valid[row * n] = 1;
    const std::size_t keep = std::min(src.tokens.size(), n - 1);
    for (std::size_t j = 0; j < keep; ++j) {
      out.tokens[row * n + 1 + j] = vocab.encode(src.tokens[j]);
      out.token_valid[row * n + 1 + j] = 1;
    }
  }
  return out;
}

std::vector<double> empirical_set_distribution(const std::int32_t* row, std::size_t n,
                                               std::size_t vocab_size) {
  if (n < 2) throw InputError("empirical_set_distribution: n >= 2 required");
  if (row[0] != Vocab::kCls) {
    throw InputError("empirical_set_distribution: slot 0 must hold [CLS]");
  }
  std::vector<double> p(vocab_size, 0.0);
  const double w = 1.0 / static_cast<double>(n - 1);
  for (std::size_t j = 1; j < n; ++j) {
    const std::int32_t id = row[j];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw EncodingError("empirical_set_distribution: id outside vocabulary");
    }
    p[static_cast<std::size_t>(id)] += w;
  }
  return p;
}

void save_jsonl(const std::vector<RawSubject>& subjects, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("save_jsonl: cannot write " + path);
  for (const auto& subj : subjects) {
    json sets = json::array();
    for (const auto& s : subj.sets) {
      sets.push_back({{"t", s.time}, {"tokens", s.tokens}});
    }
    json line = {{"subject_id", subj.subject_id}, {"sets", sets}};
    out << line.dump() << '\n';
  }
}

std::vector<RawSubject> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("load_jsonl: cannot open " + path);
  std::vector<RawSubject> subjects;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("load_jsonl: bad JSON at line " + std::to_string(lineno));
    }
    RawSubject subj;
    if (!j.contains("subject_id") || !j.contains("sets")) {
      throw FormatError("load_jsonl: missing subject_id/sets at line " + std::to_string(lineno));
    }
    subj.subject_id = j["subject_id"].get<std::string>();
    for (const auto& s : j["sets"]) {
      RawSet rs;
      rs.time = s.at("t").get<double>();
      rs.tokens = s.at("tokens").get<std::vector<std::string>>();
      subj.sets.push_back(std::move(rs));
    }
    subjects.push_back(std::move(subj));
  }
  return subjects;
}

std::vector<std::string> all_tokens(const std::vector<RawSubject>& subjects) {
  std::vector<std::string> out;
  for (const auto& subj : subjects) {
    for (const auto& s : subj.sets) {
      out.insert(out.end(), s.tokens.begin(), s.tokens.end());
    }
  }
  return out;
}

Split subject_split(const std::string& subject_id) {
  const std::uint64_t h = fnv1a64(subject_id) % 10;
  if (h < 8) return Split::kTrain;
  if (h == 8) return Split::kValid;
  return Split::kTest;
}

}  // namespace nest
