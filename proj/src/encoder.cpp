#include "prefixguard/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "prefixguard/artifact.hpp"
#include "prefixguard/common.hpp"

namespace prefixguard {

double SparseVec::dot(const SparseVec& other) const {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < idx.size() && j < other.idx.size()) {
    if (idx[i] == other.idx[j]) s += val[i++] * other.val[j++];
    else if (idx[i] < other.idx[j]) ++i;
    else ++j;
  }
  return s;
}

nlohmann::json EncoderConfig::to_json() const {
  return nlohmann::json{{"ngram_min", ngram_min},
                        {"ngram_max", ngram_max},
                        {"feature_cap", feature_cap},
                        {"min_df", min_df},
                        {"sublinear_tf", sublinear_tf}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.ngram_min = j.value("ngram_min", 1);
  c.ngram_max = j.value("ngram_max", 2);
  c.feature_cap = j.value("feature_cap", 4096);
  c.min_df = j.value("min_df", 1);
  c.sublinear_tf = j.value("sublinear_tf", false);
  return c;
}

EncoderConfig probe_encoder_config() {
  EncoderConfig c;
  c.feature_cap = 50000;
  c.min_df = 2;
  c.sublinear_tf = true;
  return c;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&]() {
    if (cur.size() >= 2) tokens.push_back(cur);
    cur.clear();
  };
  for (const char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c) || c == '_') cur.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return tokens;
}

namespace {

std::vector<std::string> ngrams(const std::vector<std::string>& tokens,
                                const EncoderConfig& cfg) {
  std::vector<std::string> grams;
  for (int n = cfg.ngram_min; n <= cfg.ngram_max; ++n) {
    if (n < 1) continue;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string g = tokens[i];
      for (int k = 1; k < n; ++k) g += " " + tokens[i + k];
      grams.push_back(std::move(g));
    }
  }
  return grams;
}

}  // namespace

VectorizerModel VectorizerModel::fit(const std::vector<std::string>& documents,
                                     const EncoderConfig& config) {
  if (documents.empty()) throw input_error("fit_vectorizer: empty corpus");
  if (config.feature_cap < 1) throw input_error("fit_vectorizer: cap >= 1");
  if (config.ngram_min > config.ngram_max || config.ngram_min < 1) {
    throw input_error("fit_vectorizer: ngram range must be contiguous and >= 1");
  }

  std::map<std::string, std::int64_t> df;
  for (const auto& doc : documents) {
    const auto grams = ngrams(tokenize(doc), config);
    std::vector<std::string> uniq(grams);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (const auto& g : uniq) ++df[g];
  }

  // Top-cap by document frequency; ties lexicographic for determinism.
  std::vector<std::pair<std::string, std::int64_t>> ranked;
  ranked.reserve(df.size());
  for (const auto& [g, d] : df) {
    if (d >= config.min_df) ranked.emplace_back(g, d);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > config.feature_cap) {
    ranked.resize(config.feature_cap);
  }
  // Feature indices follow lexicographic order over the selected set.
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  VectorizerModel m;
  m.config_ = config;
  m.n_documents_ = static_cast<std::int64_t>(documents.size());
  for (const auto& [g, d] : ranked) {
    const int index = static_cast<int>(m.features_.size());
    m.vocabulary_[g] = index;
    m.features_.push_back(g);
    m.df_.push_back(d);
    m.idf_.push_back(std::log((1.0 + m.n_documents_) / (1.0 + d)) + 1.0);
  }
  return m;
}

SparseVec VectorizerModel::encode(const std::string& text) const {
  std::map<int, double> counts;
  for (const auto& g : ngrams(tokenize(text), config_)) {
    const auto it = vocabulary_.find(g);
    if (it != vocabulary_.end()) counts[it->second] += 1.0;
  }
  SparseVec v;
  v.idx.reserve(counts.size());
  v.val.reserve(counts.size());
  double sq = 0.0;
  for (const auto& [index, count] : counts) {
    const double tf = config_.sublinear_tf ? 1.0 + std::log(count) : count;
    const double w = tf * idf_[index];
    v.idx.push_back(index);
    v.val.push_back(w);
    sq += w * w;
  }
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (double& w : v.val) w *= inv;
  }
  return v;
}

nlohmann::json VectorizerModel::to_json() const {
  nlohmann::json vocab = nlohmann::json::array();
  for (std::size_t i = 0; i < features_.size(); ++i) {
    vocab.push_back({{"ngram", features_[i]}, {"df", df_[i]}, {"idf", idf_[i]}});
  }
  return nlohmann::json{{"config", config_.to_json()},
                        {"n_documents", n_documents_},
                        {"vocabulary", vocab}};
}

VectorizerModel VectorizerModel::from_json(const nlohmann::json& j) {
  VectorizerModel m;
  m.config_ = EncoderConfig::from_json(j.at("config"));
  m.n_documents_ = j.at("n_documents").get<std::int64_t>();
  for (const auto& row : j.at("vocabulary")) {
    const int index = static_cast<int>(m.features_.size());
    const std::string g = row.at("ngram").get<std::string>();
    m.vocabulary_[g] = index;
    m.features_.push_back(g);
    m.df_.push_back(row.at("df").get<std::int64_t>());
    m.idf_.push_back(row.at("idf").get<double>());
  }
  return m;
}

std::string VectorizerModel::content_hash() const {
  return sha256_hex(to_json().dump());
}

}  // namespace prefixguard
