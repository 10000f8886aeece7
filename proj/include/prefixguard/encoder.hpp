#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace prefixguard {

// Sparse feature vector with strictly increasing indices.
struct SparseVec {
  std::vector<int> idx;
  std::vector<double> val;

  std::size_t nnz() const { return idx.size(); }
  double squared_norm() const {
    double s = 0.0;
    for (double v : val) s += v * v;
    return s;
  }
  double dot(const SparseVec& other) const;
};

struct EncoderConfig {
  int ngram_min = 1;
  int ngram_max = 2;
  int feature_cap = 4096;
  int min_df = 1;
  bool sublinear_tf = false;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// Probe variant: bigger cap, min_df 2, sublinear term frequency.
EncoderConfig probe_encoder_config();

// Frozen TF-IDF vectorizer. Feature selection keeps the top `feature_cap`
// token n-grams by document frequency, ties broken lexicographically;
// idf = ln((1+N)/(1+df)) + 1; transforms are l2-normalized.
class VectorizerModel {
 public:
  VectorizerModel() = default;

  static VectorizerModel fit(const std::vector<std::string>& documents,
                             const EncoderConfig& config);

  // Out-of-vocabulary tokens are ignored; all-OOV text maps to the zero
  // vector (the single exception to unit norm).
  SparseVec encode(const std::string& text) const;

  int dimension() const { return static_cast<int>(features_.size()); }
  std::int64_t fitted_documents() const { return n_documents_; }
  const EncoderConfig& config() const { return config_; }
  const std::vector<std::string>& features() const { return features_; }
  const std::vector<std::int64_t>& document_frequencies() const { return df_; }
  const std::vector<double>& idf() const { return idf_; }

  nlohmann::json to_json() const;
  static VectorizerModel from_json(const nlohmann::json& j);

  // Identity of the frozen vectorizer; recorded in model manifests and
  // checked at scoring time.
  std::string content_hash() const;

 private:
  EncoderConfig config_;
  std::int64_t n_documents_ = 0;
  std::vector<std::string> features_;   // index -> n-gram
  std::vector<std::int64_t> df_;
  std::vector<double> idf_;
  std::map<std::string, int> vocabulary_;  // n-gram -> index
};

// Lowercased maximal runs of >= 2 alphanumeric/underscore characters.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace prefixguard
