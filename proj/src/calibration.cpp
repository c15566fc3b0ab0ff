#include "ivq/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ivq/error.hpp"

namespace ivq {

std::size_t CalibSet::token_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

}  // namespace

CalibSet load_sequences(const std::filesystem::path& path, std::size_t max_sequences,
                        std::size_t seq_len, std::size_t vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open token file " + path.string());
  CalibSet set;
  set.vocab = vocab;
  set.provenance = path.filename().string();

  std::string line;
  std::size_t line_no = 0;
  while (set.sequences.size() < max_sequences && std::getline(in, line)) {
    ++line_no;
    TokenSequence seq;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && is_space(*p)) ++p;
      if (p == end) break;
      const char* tok_end = p;
      while (tok_end < end && !is_space(*tok_end)) ++tok_end;
      std::uint64_t value = 0;
      auto [ptr, ec] = std::from_chars(p, tok_end, value);
      if (ec != std::errc() || ptr != tok_end) {
        throw ParseError("invalid token '" + std::string(p, tok_end) + "' in " + path.string(),
                         line_no);
      }
      if (value >= vocab) {
        throw RangeError("line " + std::to_string(line_no) + ": token id " +
                         std::to_string(value) + " >= vocab " + std::to_string(vocab));
      }
      if (seq.size() < seq_len) seq.push_back(static_cast<TokenId>(value));
      p = tok_end;
    }
    if (!seq.empty()) set.sequences.push_back(std::move(seq));
  }
  return set;
}

void write_sequences(const std::filesystem::path& path, const CalibSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write token file " + path.string());
  for (const auto& seq : set.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i > 0) out << ' ';
      out << seq[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::pair<CalibSet, CalibSet> split_eval(const CalibSet& set, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("split_eval: fraction must be in (0, 1)");
  const std::size_t n = set.sequences.size();
  if (n < 2) throw DomainError("split_eval: need at least two sequences");
  const std::size_t first_count =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))),
                              1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomSource rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);

  std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first_count));
  std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(first_count), order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  auto take = [&](const std::vector<std::size_t>& idx, const char* tag) {
    CalibSet out;
    out.vocab = set.vocab;
    out.provenance = set.provenance + ":" + tag;
    for (std::size_t i : idx) out.sequences.push_back(set.sequences[i]);
    return out;
  };
  return {take(first, "calib"), take(second, "heldout")};
}

}  // namespace ivq
