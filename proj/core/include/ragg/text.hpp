#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ragg {

inline constexpr int kDefaultWordDims = 32;

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Lowercased tokens; punctuation other than apostrophes is dropped.
std::vector<std::string> tokenize(std::string_view text);
std::string to_lower(std::string_view s);

// Deterministic feature-hashed word vector (whole word plus character
// trigrams), unit length. Empty words map to zero.
Eigen::VectorXd hashed_word_embedding(std::string_view word, int dims = kDefaultWordDims);

// Mean of the word embeddings in [center - radius, center + radius].
Eigen::VectorXd context_embedding(const std::vector<std::string>& tokens, int center, int radius = 3,
                                  int dims = kDefaultWordDims);

// Cosine similarity; zero when either vector has zero norm.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace ragg
