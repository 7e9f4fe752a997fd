#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "motg/error.hpp"
#include "motg/rng.hpp"
#include "motg/sampling.hpp"

namespace motg {

/// Character-level vocabulary plus the format markers.
///
/// Ids are dense: the printable symbols first, then the special tokens. The
/// multiplication sign used in factor lists is one symbol ("×", UTF-8).
class Vocabulary {
 public:
  static const Vocabulary& standard() {
    static const Vocabulary v;
    return v;
  }

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(TokenId id) const { return symbols_.at(id); }

  TokenId think_open() const { return think_open_; }
  TokenId think_close() const { return think_close_; }
  TokenId answer_open() const { return answer_open_; }
  TokenId answer_close() const { return answer_close_; }
  TokenId eos() const { return eos_; }
  TokenId pad() const { return pad_; }

  std::optional<TokenId> find(std::string_view sym) const {
    auto it = index_.find(std::string(sym));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Greedy longest-match tokenization; markers and "×" are single tokens.
  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    std::size_t i = 0;
    while (i < text.size()) {
      bool matched = false;
      for (const auto& m : multi_) {
        if (text.substr(i, m.size()) == m) {
          ids.push_back(index_.at(m));
          i += m.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
      auto id = find(text.substr(i, 1));
      if (!id) throw InvalidInput("character '" + std::string(text.substr(i, 1)) + "' is not in the vocabulary");
      ids.push_back(*id);
      ++i;
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string s;
    for (TokenId id : ids) s += symbol(id);
    return s;
  }

 private:
  Vocabulary() {
    for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
    for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
    for (const char* s : {" ", "+", "-", "*", ",", "=", "?"}) add(s);
    add("\xC3\x97");  // ×
    think_open_ = add("<think>");
    think_close_ = add("</think>");
    answer_open_ = add("<answer>");
    answer_close_ = add("</answer>");
    eos_ = add("<eos>");
    pad_ = add("<pad>");
    for (const auto& s : symbols_)
      if (s.size() > 1) multi_.push_back(s);
    std::sort(multi_.begin(), multi_.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  }
  TokenId add(const std::string& s) {
    index_[s] = symbols_.size();
    symbols_.push_back(s);
    return symbols_.size() - 1;
  }

  std::vector<std::string> symbols_;
  std::map<std::string, TokenId> index_;
  std::vector<std::string> multi_;
  TokenId think_open_ = 0, think_close_ = 0, answer_open_ = 0, answer_close_ = 0, eos_ = 0, pad_ = 0;
};

inline constexpr std::string_view kTimes = "\xC3\x97";

enum class TaskKind { mod_sum, prime_factorization, number_sequence, copy_reverse };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::mod_sum: return "mod_sum";
    case TaskKind::prime_factorization: return "prime_factorization";
    case TaskKind::number_sequence: return "number_sequence";
    case TaskKind::copy_reverse: return "copy_reverse";
  }
  return "?";
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "mod_sum") return TaskKind::mod_sum;
  if (s == "prime_factorization") return TaskKind::prime_factorization;
  if (s == "number_sequence") return TaskKind::number_sequence;
  if (s == "copy_reverse") return TaskKind::copy_reverse;
  throw InvalidInput("unknown task kind '" + std::string(s) + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::mod_sum;
  std::uint64_t seed = 0;
  // mod_sum: "a+b mod m"
  int max_operand = 9;
  int min_modulus = 2;
  int max_modulus = 5;
  // prime_factorization: "factor n", 2 <= n <= max_value
  int max_value = 99;
  // number_sequence: arithmetic progression, `shown` terms then "?"
  int shown = 4;
  int max_start = 9;
  int max_step = 5;
  // copy_reverse: "reverse abc"
  int min_length = 2;
  int max_length = 5;

  void validate() const {
    auto need = [](bool ok, const char* what) {
      if (!ok) throw InvalidInput(std::string("task: ") + what);
    };
    switch (kind) {
      case TaskKind::mod_sum:
        need(max_operand >= 0 && max_operand <= 999, "max_operand must lie in [0, 999]");
        need(min_modulus >= 2 && min_modulus <= max_modulus && max_modulus <= 99, "need 2 <= min_modulus <= max_modulus <= 99");
        break;
      case TaskKind::prime_factorization:
        need(max_value >= 2 && max_value <= 999, "max_value must lie in [2, 999]");
        break;
      case TaskKind::number_sequence:
        need(shown >= 2 && shown <= 8, "shown must lie in [2, 8]");
        need(max_start >= 0 && max_start <= 999 && max_step >= 1 && max_step <= 99, "start/step out of range");
        break;
      case TaskKind::copy_reverse:
        need(min_length >= 1 && min_length <= max_length && max_length <= 16, "need 1 <= min_length <= max_length <= 16");
        break;
    }
  }

  // Upper bound on the prompt length in tokens, including the think marker.
  std::size_t max_prompt_tokens() const {
    auto digits = [](long v) { return std::to_string(v).size(); };
    switch (kind) {
      case TaskKind::mod_sum: return 2 * digits(max_operand) + 1 + 5 + digits(max_modulus) + 1;
      case TaskKind::prime_factorization: return 7 + digits(max_value) + 1;
      case TaskKind::number_sequence:
        return static_cast<std::size_t>(shown) * (digits(max_start + static_cast<long>(shown) * max_step) + 1) + 1 + 1;
      case TaskKind::copy_reverse: return 8 + static_cast<std::size_t>(max_length) + 1;
    }
    return 0;
  }
};

enum class Split { train, eval };

struct TaskInstance {
  TaskKind kind = TaskKind::mod_sum;
  std::string prompt_text;
  std::vector<TokenId> prompt_token_ids;  // prompt text followed by <think>
  std::string canonical_answer;
  std::uint64_t instance_seed = 0;
};

/// Seeds of the two splits differ in the top bit, so they can never collide.
inline std::uint64_t instance_seed(std::uint64_t spec_seed, Split split, std::uint64_t index) {
  const std::uint64_t s = splitmix64(splitmix64(spec_seed) ^ splitmix64(index));
  return split == Split::train ? (s & ~(1ULL << 63)) : (s | (1ULL << 63));
}

inline std::vector<int> prime_factors(int n) {
  std::vector<int> f;
  for (int p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  if (n > 1) f.push_back(n);
  return f;
}

inline TaskInstance generate_instance(const TaskSpec& spec, std::uint64_t index, Split split = Split::train,
                                      const Vocabulary& vocab = Vocabulary::standard()) {
  spec.validate();
  TaskInstance inst;
  inst.kind = spec.kind;
  inst.instance_seed = instance_seed(spec.seed, split, index);
  Rng rng(inst.instance_seed);
  auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  switch (spec.kind) {
    case TaskKind::mod_sum: {
      const int a = uniform_int(0, spec.max_operand), b = uniform_int(0, spec.max_operand);
      const int m = uniform_int(spec.min_modulus, spec.max_modulus);
      inst.prompt_text = std::to_string(a) + "+" + std::to_string(b) + " mod " + std::to_string(m);
      inst.canonical_answer = std::to_string((a + b) % m);
      break;
    }
    case TaskKind::prime_factorization: {
      const int n = uniform_int(2, spec.max_value);
      inst.prompt_text = "factor " + std::to_string(n);
      std::string ans;
      for (int f : prime_factors(n)) {
        if (!ans.empty()) ans += " " + std::string(kTimes) + " ";
        ans += std::to_string(f);
      }
      inst.canonical_answer = ans;
      break;
    }
    case TaskKind::number_sequence: {
      const int start = uniform_int(0, spec.max_start), step = uniform_int(1, spec.max_step);
      for (int i = 0; i < spec.shown; ++i) inst.prompt_text += std::to_string(start + i * step) + ",";
      inst.prompt_text += "?";
      inst.canonical_answer = std::to_string(start + spec.shown * step);
      break;
    }
    case TaskKind::copy_reverse: {
      const int len = uniform_int(spec.min_length, spec.max_length);
      std::string s;
      for (int i = 0; i < len; ++i) s += static_cast<char>('a' + rng.below(26));
      inst.prompt_text = "reverse " + s;
      inst.canonical_answer = std::string(s.rbegin(), s.rend());
      break;
    }
  }
  inst.prompt_token_ids = vocab.encode(inst.prompt_text);
  inst.prompt_token_ids.push_back(vocab.think_open());
  return inst;
}

inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

/// Text between the first <answer> and the next </answer>, trimmed.
inline std::optional<std::string> extract_answer(std::string_view text) {
  const auto open = text.find(kAnswerOpen);
  if (open == std::string_view::npos) return std::nullopt;
  const auto begin = open + kAnswerOpen.size();
  const auto close = text.find(kAnswerClose, begin);
  if (close == std::string_view::npos) return std::nullopt;
  std::string_view body = text.substr(begin, close - begin);
  const auto ws = " \t\n\r\f\v";
  const auto b = body.find_first_not_of(ws);
  if (b == std::string_view::npos) return std::string();
  const auto e = body.find_last_not_of(ws);
  return std::string(body.substr(b, e - b + 1));
}

namespace detail {

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

inline std::optional<std::vector<long long>> parse_factor_list(std::string_view s) {
  std::vector<long long> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(kTimes, pos);
    std::string part = collapse_whitespace(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    auto v = parse_integer(part);
    if (!v) return std::nullopt;
    out.push_back(*v);
    if (next == std::string_view::npos) break;
    pos = next + kTimes.size();
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Per-kind canonical comparison of an extracted answer with the reference.
inline bool answers_match(TaskKind kind, std::string_view given, std::string_view canonical) {
  const std::string a = detail::collapse_whitespace(given), b = detail::collapse_whitespace(canonical);
  switch (kind) {
    case TaskKind::mod_sum:
    case TaskKind::number_sequence: {
      auto x = detail::parse_integer(a), y = detail::parse_integer(b);
      return x && y && *x == *y;
    }
    case TaskKind::prime_factorization: {
      auto x = detail::parse_factor_list(a), y = detail::parse_factor_list(b);
      return x && y && *x == *y;
    }
    case TaskKind::copy_reverse: return a == b;
  }
  return false;
}

inline constexpr double kFormatBonus = 0.1;

/// 1 for a correct answer, the format bonus for a parseable wrong one, else 0.
inline double reward(const TaskInstance& inst, std::string_view decoded_text, bool format_bonus = true) {
  const auto ans = extract_answer(decoded_text);
  if (!ans) return 0.0;
  if (answers_match(inst.kind, *ans, inst.canonical_answer)) return 1.0;
  return format_bonus ? kFormatBonus : 0.0;
}

/// "<answer>text</answer><eos>" as tokens; used to score canonical answers.
inline std::vector<TokenId> answer_tokens(const std::string& answer, const Vocabulary& vocab = Vocabulary::standard()) {
  std::vector<TokenId> ids{vocab.answer_open()};
  for (TokenId id : vocab.encode(answer)) ids.push_back(id);
  ids.push_back(vocab.answer_close());
  ids.push_back(vocab.eos());
  return ids;
}

}  // namespace motg
