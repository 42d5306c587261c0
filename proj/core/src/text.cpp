#include "ragg/text.hpp"

#include <algorithm>
#include <cctype>

namespace ragg {

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

namespace {

void add_feature(Eigen::VectorXd& v, std::string_view feat, double weight) {
  const std::uint64_t h = fnv1a64(feat);
  const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(v.size()));
  const double sign = ((h >> 32) & 1U) != 0U ? 1.0 : -1.0;
  v(bucket) += sign * weight;
}

}  // namespace

Eigen::VectorXd hashed_word_embedding(std::string_view word, int dims) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dims);
  if (word.empty()) return v;
  const std::string w = to_lower(word);
  add_feature(v, "w:" + w, 1.0);
  const std::string padded = "<" + w + ">";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add_feature(v, "t:" + padded.substr(i, 3), 0.5);
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

Eigen::VectorXd context_embedding(const std::vector<std::string>& tokens, int center, int radius, int dims) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dims);
  int count = 0;
  const int n = static_cast<int>(tokens.size());
  for (int i = std::max(0, center - radius); i <= std::min(n - 1, center + radius); ++i) {
    acc += hashed_word_embedding(tokens[static_cast<std::size_t>(i)], dims);
    ++count;
  }
  if (count > 0) acc /= static_cast<double>(count);
  return acc;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace ragg
