#include "foulseg/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "foulseg/config_util.hpp"
#include "foulseg/error.hpp"

namespace foulseg {

double tile_uncertainty(const ProbabilityField& probs) {
  const std::size_t pixels = static_cast<std::size_t>(probs.width) * probs.height;
  if (pixels == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    double h = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double p = probs.probs[i * kNumClasses + c];
      if (p > 0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(pixels);
}

SelectionConfig SelectionConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"K", "k"}, "selection");
  SelectionConfig c;
  read_key(j, "K", c.candidates, "selection");
  read_key(j, "k", c.batch, "selection");
  if (c.batch < 1 || c.candidates < c.batch) throw Error(ErrorCode::ConfigError, "selection: need 1 <= k <= K");
  return c;
}

nlohmann::json SelectionConfig::to_json() const { return {{"K", candidates}, {"k", batch}}; }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "embeddings differ in length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double cover_value(const std::vector<PoolEntry>& pool, const std::vector<std::size_t>& chosen) {
  double f = 0.0;
  for (const auto& x : pool) {
    double best = 0.0;
    for (auto s : chosen) best = std::max(best, cosine(x.embedding, pool[s].embedding));
    f += best;
  }
  return f;
}

Selection select_annotation_batch(const std::vector<PoolEntry>& pool, const SelectionConfig& config) {
  if (config.batch < 1 || config.candidates < config.batch) {
    throw Error(ErrorCode::InvalidConfig, "selection: need 1 <= k <= K");
  }
  if (pool.size() < static_cast<std::size_t>(config.batch)) {
    throw Error(ErrorCode::PoolTooSmall, "pool has " + std::to_string(pool.size()) + " tiles, batch needs " +
                                             std::to_string(config.batch));
  }
  for (const auto& e : pool)
    if (e.embedding.size() != pool.front().embedding.size()) {
      throw Error(ErrorCode::ShapeMismatch, "embedding length differs for tile " + e.tile_id);
    }

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pool[a].uncertainty != pool[b].uncertainty) return pool[a].uncertainty > pool[b].uncertainty;
    return pool[a].tile_id < pool[b].tile_id;
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(config.candidates)));

  Selection out;
  for (auto i : order) out.candidates.push_back(pool[i].tile_id);

  // similarity[c][x] between candidate c and every pool entry x
  std::vector<std::vector<double>> sim(order.size(), std::vector<double>(pool.size()));
  for (std::size_t c = 0; c < order.size(); ++c)
    for (std::size_t x = 0; x < pool.size(); ++x) sim[c][x] = cosine(pool[order[c]].embedding, pool[x].embedding);

  std::vector<double> covered(pool.size(), 0.0);
  std::vector<bool> taken(order.size(), false);
  double f = 0.0;
  for (int round = 0; round < config.batch; ++round) {
    std::size_t best = order.size();
    double best_gain = -1.0;
    for (std::size_t c = 0; c < order.size(); ++c) {
      if (taken[c]) continue;
      double gain = 0.0;
      for (std::size_t x = 0; x < pool.size(); ++x) gain += std::max(0.0, sim[c][x] - covered[x]);
      if (gain > best_gain) {
        best_gain = gain;
        best = c;
      }
    }
    taken[best] = true;
    for (std::size_t x = 0; x < pool.size(); ++x) covered[x] = std::max(covered[x], sim[best][x]);
    f += best_gain;
    out.selected.push_back(pool[order[best]].tile_id);
    out.cover.push_back(f);
  }
  return out;
}

ProjectionConfig ProjectionConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "projection";
  require_known_keys(j,
                     {"pca_components", "perplexity", "learning_rate", "iterations", "early_exaggeration",
                      "exaggeration_iterations"},
                     s);
  ProjectionConfig c;
  read_key(j, "pca_components", c.pca_components, s);
  read_key(j, "perplexity", c.perplexity, s);
  read_key(j, "learning_rate", c.learning_rate, s);
  read_key(j, "iterations", c.iterations, s);
  read_key(j, "early_exaggeration", c.early_exaggeration, s);
  read_key(j, "exaggeration_iterations", c.exaggeration_iterations, s);
  if (c.pca_components < 2 || !(c.perplexity > 0) || !(c.learning_rate > 0) || c.iterations < 1) {
    throw Error(ErrorCode::ConfigError, "projection: invalid parameters");
  }
  return c;
}

nlohmann::json ProjectionConfig::to_json() const {
  return {{"pca_components", pca_components},         {"perplexity", perplexity},
          {"learning_rate", learning_rate},           {"iterations", iterations},
          {"early_exaggeration", early_exaggeration}, {"exaggeration_iterations", exaggeration_iterations}};
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, std::vector<bool>* constant_channel) {
  Eigen::MatrixXd out = x;
  if (constant_channel) constant_channel->assign(static_cast<std::size_t>(x.cols()), false);
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double var = (x.col(c).array() - mean).square().sum() / n;
    if (var <= 1e-24) {
      if (constant_channel) (*constant_channel)[static_cast<std::size_t>(c)] = true;
      continue;
    }
    out.col(c) = (x.col(c).array() - mean) / std::sqrt(var);
  }
  return out;
}

Eigen::MatrixXd pca(const Eigen::MatrixXd& x, int components) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto k = std::min<Eigen::Index>(components, svd.matrixV().cols());
  Eigen::MatrixXd v = svd.matrixV().leftCols(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0) v.col(c) = -v.col(c);
  }
  return centered * v;
}

namespace {

// Row-conditional Gaussian affinities with per-point bandwidth matching the perplexity.
Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& x, double perplexity) {
  const auto n = x.rows();
  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 100; ++iter) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double v = std::exp(-d2(i, j) * beta);
        p(i, j) = v;
        sum += v;
        weighted += d2(i, j) * v;
      }
      if (sum <= 0) sum = 1e-300;
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (Eigen::Index j = 0; j < n; ++j) p(i, j) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2 : (beta + lo) / 2;
      }
    }
  }
  Eigen::MatrixXd joint = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  return joint.cwiseMax(1e-12);
}

}  // namespace

Eigen::MatrixXd tsne(const Eigen::MatrixXd& x, const Eigen::MatrixXd& init, const ProjectionConfig& config,
                     double* final_kl) {
  const auto n = x.rows();
  if (n < 2) throw Error(ErrorCode::DegenerateInput, "t-SNE needs at least two points");
  const double perplexity = std::min(config.perplexity, std::max(1.0, (static_cast<double>(n) - 1.0) / 3.0));
  const Eigen::MatrixXd p = joint_probabilities(x, perplexity);

  Eigen::MatrixXd y = init;
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  Eigen::MatrixXd grad(n, 2);
  double kl = 0.0;
  for (int iter = 0; iter < config.iterations; ++iter) {
    const bool early = iter < config.exaggeration_iterations;
    const double exaggeration = early ? config.early_exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;

    double qsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = v;
        num(j, i) = v;
        qsum += 2 * v;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / qsum, 1e-12);
        const double coeff = 4.0 * (exaggeration * p(i, j) - q) * num(i, j);
        grad.row(i) += coeff * (y.row(i) - y.row(j));
      }
    for (Eigen::Index i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) {
        const bool same = (grad(i, d) > 0) == (update(i, d) > 0);
        gains(i, d) = std::max(same ? gains(i, d) * 0.8 : gains(i, d) + 0.2, 0.01);
        update(i, d) = momentum * update(i, d) - config.learning_rate * gains(i, d) * grad(i, d);
        y(i, d) += update(i, d);
      }
    if (iter + 1 == config.iterations) {
      kl = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          if (i == j) continue;
          kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / qsum, 1e-12));
        }
    }
  }
  if (final_kl) *final_kl = kl;
  return y;
}

Projection project_latent_space(const std::vector<std::vector<double>>& embeddings, const ProjectionConfig& config) {
  const auto n = static_cast<Eigen::Index>(embeddings.size());
  if (n < 3) throw Error(ErrorCode::DegenerateInput, "projection needs at least three embeddings");
  const auto d = static_cast<Eigen::Index>(embeddings.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(embeddings[static_cast<std::size_t>(i)].size()) != d) {
      throw Error(ErrorCode::ShapeMismatch, "embeddings differ in length");
    }
    for (Eigen::Index c = 0; c < d; ++c) x(i, c) = embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  Projection out;
  out.standardized = standardize(x, &out.constant_channel);
  if (std::all_of(out.constant_channel.begin(), out.constant_channel.end(), [](bool b) { return b; })) {
    throw Error(ErrorCode::DegenerateInput, "every embedding channel is constant");
  }
  const int k = static_cast<int>(std::min<Eigen::Index>({config.pca_components, n - 1, d}));
  out.reduced = pca(out.standardized, k);

  Eigen::MatrixXd init = Eigen::MatrixXd::Zero(n, 2);
  init.leftCols(std::min<Eigen::Index>(2, out.reduced.cols())) = out.reduced.leftCols(std::min<Eigen::Index>(2, out.reduced.cols()));
  const double mean0 = init.col(0).mean();
  const double sd0 = std::sqrt((init.col(0).array() - mean0).square().sum() / static_cast<double>(n));
  if (sd0 > 0) init *= 1e-4 / sd0;
  out.coords = tsne(out.reduced, init, config, &out.final_kl);
  return out;
}

double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  const auto n = points.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw Error(ErrorCode::LengthMismatch, "labels and points differ");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw Error(ErrorCode::DegenerateInput, "silhouette needs two clusters");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, double> sum;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[static_cast<std::size_t>(j)]] += (points.row(i) - points.row(j)).norm();
    }
    const int own = labels[static_cast<std::size_t>(i)];
    if (sizes[own] < 2) continue;  // singleton clusters score 0
    const double a = sum[own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sum)
      if (l != own) b = std::min(b, s / sizes[l]);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace foulseg
