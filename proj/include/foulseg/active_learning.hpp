#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "foulseg/probability.hpp"

namespace foulseg {

/// Mean per-pixel entropy (nats) of a probability field; 0 ln 0 = 0.
double tile_uncertainty(const ProbabilityField& probs);

struct PoolEntry {
  std::string tile_id;
  std::vector<double> embedding;
  double uncertainty = 0.0;
};

struct SelectionConfig {
  int candidates = 64;  // K
  int batch = 16;       // k

  static SelectionConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Selection {
  std::vector<std::string> candidates;  // top-K by uncertainty (desc), ties by tile_id
  std::vector<std::string> selected;    // greedy order
  std::vector<double> cover;            // F(S) after each greedy step
};

/// Cosine similarity; 0 when either vector is zero.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// F(S) = sum over pool of max_{s in S} cos(x, s), where an uncovered point contributes max(0, .).
double cover_value(const std::vector<PoolEntry>& pool, const std::vector<std::size_t>& chosen);

/// Top-K uncertainty filter followed by greedy maximum cover. Throws PoolTooSmall when the pool has fewer
/// than k entries; K is clamped to the pool size.
Selection select_annotation_batch(const std::vector<PoolEntry>& pool, const SelectionConfig& config);

struct ProjectionConfig {
  int pca_components = 50;
  double perplexity = 50.0;
  double learning_rate = 200.0;
  int iterations = 2000;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;

  static ProjectionConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Projection {
  Eigen::MatrixXd standardized;  // n x d
  std::vector<bool> constant_channel;
  Eigen::MatrixXd reduced;  // n x min(pca_components, n - 1, d)
  Eigen::MatrixXd coords;   // n x 2
  double final_kl = 0.0;
};

/// Channel-wise z-score; zero-variance channels are left untouched and flagged.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, std::vector<bool>* constant_channel = nullptr);
/// Principal component scores with a deterministic sign (largest loading positive).
Eigen::MatrixXd pca(const Eigen::MatrixXd& x, int components);
/// Exact-gradient t-SNE from the given initial layout.
Eigen::MatrixXd tsne(const Eigen::MatrixXd& x, const Eigen::MatrixXd& init, const ProjectionConfig& config,
                     double* final_kl = nullptr);

Projection project_latent_space(const std::vector<std::vector<double>>& embeddings, const ProjectionConfig& config);

/// Mean silhouette coefficient of a labelled 2-D layout (Euclidean).
double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels);

}  // namespace foulseg
