#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nest/vocab.hpp"

namespace nest {

// One subject's event stream before padding: time-ordered multisets of raw
// token strings. This is also the JSONL on-disk representation.
struct RawSet {
  double time = 0.0;
  std::vector<std::string> tokens;
};

struct RawSubject {
  std::string subject_id;
  std::vector<RawSet> sets;
};

// Fixed-size padded/truncated event stream: m sets of n token slots, slot 0
// of every valid set holds [CLS].
struct SeqSet {
  std::string subject_id;
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<std::int32_t> tokens;      // m*n, row-major
  std::vector<double> set_times;         // m
  std::vector<std::uint8_t> set_valid;   // m
  std::vector<std::uint8_t> token_valid; // m*n

  std::int32_t token(std::size_t set, std::size_t slot) const { return tokens[set * n + slot]; }
  std::size_t num_valid_sets() const;
};

// Throws InputError naming the violated invariant.
void validate_seqset(const SeqSet& s);

// Keeps the most recent m sets; within a set keeps the first n-1 tokens in
// source-record order, prepends [CLS], pads with [PAD].
SeqSet pad_truncate(const RawSubject& raw, const Vocab& vocab, std::size_t n, std::size_t m);

// Empirical token distribution of one padded set row (n ids, slot 0 = [CLS]):
// counts over the n-1 non-CLS slots, [PAD] mass included, normalized by n-1.
std::vector<double> empirical_set_distribution(const std::int32_t* row, std::size_t n,
                                               std::size_t vocab_size);

// JSONL dataset file: one subject per line,
// {"subject_id": str, "sets": [{"t": float, "tokens": [str, ...]}, ...]}.
void save_jsonl(const std::vector<RawSubject>& subjects, const std::string& path);
std::vector<RawSubject> load_jsonl(const std::string& path);

std::vector<std::string> all_tokens(const std::vector<RawSubject>& subjects);

enum class Split { kTrain, kValid, kTest };

// Deterministic subject-level 80/10/10 split by hash of subject_id.
Split subject_split(const std::string& subject_id);

}  // namespace nest
