#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ewclab/error.hpp"
#include "ewclab/evalanalysis.hpp"
#include "ewclab/kernels/kernels.hpp"

namespace ewclab {
namespace {

constexpr double kEntropyTol = 1e-5;
constexpr int kMaxBisection = 50;
constexpr double kAffinityFloor = 1e-12;
constexpr double kInitStd = 1e-4;

// Conditional affinities p_{j|i} for one row at precision beta; returns the
// entropy (nats). row_d holds squared distances with d[i] ignored.
double row_affinities(std::span<const double> d, std::size_t self, double beta, double d_min,
                      std::span<double> p) {
    double sum = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
        p[j] = j == self ? 0.0 : std::exp(-beta * (d[j] - d_min));
        sum += p[j];
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) return std::numeric_limits<double>::quiet_NaN();
    double h = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
        p[j] /= sum;
        if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    }
    return h;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& y, std::size_t n) {
    std::vector<double> num(n * n, 0.0);
    double sum_q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            const double q = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = num[j * n + i] = q;
            sum_q += 2.0 * q;
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = p[i * n + j];
            const double qij = std::max(num[i * n + j] / sum_q, std::numeric_limits<double>::min());
            kl += pij * std::log(pij / qij);
        }
    return kl;
}

} // namespace

void TsneConfig::validate() const {
    if (!(perplexity >= 2.0)) fail(ErrorKind::Config, "t-SNE perplexity must be >= 2");
    if (iters < 1) fail(ErrorKind::Config, "t-SNE iters must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::Config, "t-SNE learning_rate must be positive");
    if (!(exaggeration >= 1.0)) fail(ErrorKind::Config, "t-SNE exaggeration must be >= 1");
}

ParamPointSet collect_layer_points(const std::map<std::string, ModelParams>& checkpoints, int layer) {
    if (checkpoints.empty()) fail(ErrorKind::InvalidInput, "no checkpoints to collect points from");
    const ModelConfig& cfg = checkpoints.begin()->second.config;
    for (const auto& [task, p] : checkpoints) {
        ModelConfig a = p.config, b = cfg;
        a.seed = b.seed = 0;  // init seed does not change the layout
        if (!(a == b)) fail(ErrorKind::InvalidInput, "checkpoint '" + task + "' has a different model config");
    }
    if (layer < 0 || layer >= cfg.n_layers)
        fail(ErrorKind::InvalidInput, "layer " + std::to_string(layer) + " outside the encoder");
    ParamPointSet set;
    set.layer = layer;
    set.dim = static_cast<std::size_t>(cfg.d_model);
    const std::string pre = "layer" + std::to_string(layer) + ".attn.";
    for (const auto& [task, p] : checkpoints)
        for (const char* m : {"wk", "wo", "wq", "wv"}) {
            const Tensor& w = p.at(pre + m);
            const std::size_t in = w.shape[0], out = w.shape[1];
            for (std::size_t j = 0; j < out; ++j) {
                for (std::size_t i = 0; i < in; ++i) set.points.push_back(w.data[i * out + j]);
                set.labels.push_back(task);
            }
        }
    return set;
}

TsneResult tsne(const ParamPointSet& ps, const TsneConfig& cfg) {
    cfg.validate();
    const std::size_t n = ps.size();
    if (n < 4) fail(ErrorKind::InvalidInput, "t-SNE needs at least 4 points, got " + std::to_string(n));
    if (ps.points.size() != n * ps.dim || ps.dim == 0) fail(ErrorKind::InvalidInput, "t-SNE point matrix is malformed");
    for (std::size_t i = 0; i < ps.points.size(); ++i)
        if (!std::isfinite(ps.points[i]))
            fail(ErrorKind::InvalidInput, "t-SNE point " + std::to_string(i / ps.dim) + " is not finite");

    TsneResult res;
    res.n = n;
    res.perplexity = std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);
    const double target_h = std::log(res.perplexity);

    const auto& k = kernels::active();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist[i * n + j] = dist[j * n + i] = k.sq_dist(ps.row(i), ps.row(j), ps.dim);

    std::vector<double> p(n * n, 0.0);
    res.point_perplexity.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::span<const double> d(dist.data() + i * n, n);
        std::span<double> row(p.data() + i * n, n);
        double d_min = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) d_min = std::min(d_min, d[j]);
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double h = row_affinities(d, i, beta, d_min, row);
        for (int step = 0; step < kMaxBisection && std::isfinite(h) && std::abs(h - target_h) > kEntropyTol; ++step) {
            if (h > target_h) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = row_affinities(d, i, beta, d_min, row);
        }
        if (!std::isfinite(h))
            fail(ErrorKind::Degeneracy, "t-SNE point " + std::to_string(i) + " has an all-zero affinity row");
        res.point_perplexity[i] = std::exp(h);
    }

    // Symmetrize, normalize and floor.
    std::vector<double> pj(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) pj[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), kAffinityFloor);
    double total = 0.0;
    for (double v : pj) total += v;
    for (double& v : pj) v /= total;

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, kInitStd);
    std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n), num(n * n);
    for (double& v : y) v = normal(rng);

    const int kl_iter = std::min(cfg.exaggeration_iters, cfg.iters - 1);
    for (int it = 0; it < cfg.iters; ++it) {
        if (it == kl_iter) res.kl_initial = kl_divergence(pj, y, n);
        const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        const double momentum = it < cfg.momentum_switch_iter ? cfg.momentum_initial : cfg.momentum_final;

        double sum_q = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = num[j * n + i] = q;
                sum_q += 2.0 * q;
            }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = num[i * n + j];
                const double mult = (exag * pj[i * n + j] - q / sum_q) * q;
                grad[2 * i] += 4.0 * mult * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += 4.0 * mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
        for (std::size_t c = 0; c < 2 * n; ++c) {
            const bool same_sign = (grad[c] > 0.0) == (update[c] > 0.0);
            gains[c] = same_sign ? std::max(gains[c] * 0.8, 0.01) : gains[c] + 0.2;
            update[c] = momentum * update[c] - cfg.learning_rate * gains[c] * grad[c];
            y[c] += update[c];
        }
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += y[2 * i];
            my += y[2 * i + 1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[2 * i] -= mx;
            y[2 * i + 1] -= my;
        }
    }
    res.kl_final = kl_divergence(pj, y, n);
    res.coords = std::move(y);
    return res;
}

double silhouette(std::span<const double> coords, std::size_t dim, std::span<const std::string> labels) {
    const std::size_t n = labels.size();
    if (n < 2 || coords.size() != n * dim) fail(ErrorKind::InvalidInput, "silhouette needs n x dim coordinates");
    std::vector<std::string> classes(labels.begin(), labels.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) fail(ErrorKind::InvalidInput, "silhouette needs at least two labels");
    std::vector<std::size_t> cls(n);
    for (std::size_t i = 0; i < n; ++i)
        cls[i] = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin());
    std::vector<std::size_t> count(classes.size(), 0);
    for (auto c : cls) ++count[c];

    double total = 0.0;
    std::vector<double> dsum(classes.size());
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dsum.begin(), dsum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double d = coords[i * dim + c] - coords[j * dim + c];
                s += d * d;
            }
            dsum[cls[j]] += std::sqrt(s);
        }
        if (count[cls[i]] <= 1) continue;  // singleton clusters score 0
        const double a = dsum[cls[i]] / static_cast<double>(count[cls[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes.size(); ++c)
            if (c != cls[i] && count[c] > 0) b = std::min(b, dsum[c] / static_cast<double>(count[c]));
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

} // namespace ewclab
