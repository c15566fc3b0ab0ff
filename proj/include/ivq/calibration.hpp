#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ivq/model.hpp"

namespace ivq {

struct CalibSet {
  std::vector<TokenSequence> sequences;
  std::size_t vocab = 0;
  std::string provenance;

  std::size_t token_count() const noexcept;
};

// Token-text format: UTF-8, one sequence per line, whitespace-separated
// decimal token ids. Blank lines are skipped. Reads the first
// `max_sequences` sequences, truncating each to `seq_len` tokens.
CalibSet load_sequences(const std::filesystem::path& path, std::size_t max_sequences,
                        std::size_t seq_len, std::size_t vocab);

void write_sequences(const std::filesystem::path& path, const CalibSet& set);

// Deterministic disjoint split; `fraction` of the sequences (at least one,
// at most all but one) go to the first set. Both halves keep input order.
std::pair<CalibSet, CalibSet> split_eval(const CalibSet& set, double fraction, std::uint64_t seed);

}  // namespace ivq
