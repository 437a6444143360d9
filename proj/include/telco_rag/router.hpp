#pragma once

// Series router: a two-branch classifier that maps a query embedding to a
// probability vector over the 18 standards series (21..38).
//
//   branch 1: query embedding -> [affine -> ReLU -> dropout -> batchnorm] x n -> joint dim
//   branch 2: alignment scores (query . summary_j) -> softmax -> affine -> joint dim
//   joint   = alpha * branch1 + beta * branch2      (alpha, beta trainable scalars)
//   output  = softmax(head(joint))
//
// Trained with categorical cross-entropy and SGD with momentum. Everything
// is templated on the scalar so the same code runs in float for production
// and in double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "chunking.hpp"
#include "embedding.hpp"
#include "embedding_store.hpp"
#include "error.hpp"
#include "hashing.hpp"

namespace telco_rag {

// ---------------------------------------------------------------------------
// Series summaries

struct SeriesSummary {
    int series_id = 0;
    std::string summary;
    Vector embedding;
};

/// Exactly one summary per series 21..38, sorted by series id, unit-norm.
class SeriesSummaries {
public:
    explicit SeriesSummaries(std::vector<SeriesSummary> entries) : entries_(std::move(entries)) {
        if (entries_.size() != static_cast<std::size_t>(kNumSeries))
            throw IntegrityError("expected 18 series summaries, got " + std::to_string(entries_.size()));
        std::sort(entries_.begin(), entries_.end(), [](auto& a, auto& b) { return a.series_id < b.series_id; });
        for (std::size_t j = 0; j < entries_.size(); ++j) {
            if (entries_[j].series_id != kFirstSeries + static_cast<int>(j))
                throw IntegrityError("series summaries must cover 21..38 exactly once");
            if (entries_[j].embedding.size() != entries_.front().embedding.size())
                throw IntegrityError("series summary embeddings differ in dimension");
            normalize_in_place(entries_[j].embedding);
        }
    }

    std::size_t dim() const { return entries_.front().embedding.size(); }
    const std::vector<SeriesSummary>& entries() const noexcept { return entries_; }

    /// {"series": [{"series_id", "summary", "embedding"?}]}. Entries without
    /// an inline embedding are embedded from their summary text.
    static SeriesSummaries load(const std::filesystem::path& p, EmbedClient* embedder) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(p));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(p.string() + ": " + e.what());
        }
        std::vector<SeriesSummary> entries;
        std::vector<std::size_t> need;
        for (const auto& rec : j.at("series")) {
            SeriesSummary s;
            s.series_id = rec.at("series_id").get<int>();
            s.summary = rec.value("summary", std::string{});
            if (rec.contains("embedding")) {
                s.embedding = rec.at("embedding").get<Vector>();
            } else {
                need.push_back(entries.size());
            }
            entries.push_back(std::move(s));
        }
        if (!need.empty()) {
            if (!embedder) throw ConfigError("summaries without embeddings need an embedding provider");
            std::vector<std::string> texts;
            for (auto i : need) texts.push_back(entries[i].summary);
            auto vecs = embedder->embed(texts);
            for (std::size_t n = 0; n < need.size(); ++n) entries[need[n]].embedding = std::move(vecs[n].components);
        }
        return SeriesSummaries(std::move(entries));
    }

    nlohmann::json to_json(bool with_embeddings) const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : entries_) {
            nlohmann::json rec = {{"series_id", s.series_id}, {"summary", s.summary}};
            if (with_embeddings) rec["embedding"] = s.embedding;
            arr.push_back(rec);
        }
        return {{"series", arr}};
    }

private:
    std::vector<SeriesSummary> entries_;
};

struct RouterInputs {
    Vector query;     // input 1: the query embedding unchanged
    Vector alignment; // input 2: <query, summary_j> for series 21..38
};

inline RouterInputs build_inputs(std::span<const float> query_embedding, const SeriesSummaries& summaries) {
    if (query_embedding.size() != summaries.dim())
        throw IntegrityError("query dim " + std::to_string(query_embedding.size()) + " != summary dim " +
                             std::to_string(summaries.dim()));
    RouterInputs in;
    in.query.assign(query_embedding.begin(), query_embedding.end());
    in.alignment.reserve(kNumSeries);
    for (const auto& s : summaries.entries()) in.alignment.push_back(static_cast<float>(dot(query_embedding, s.embedding)));
    return in;
}

// ---------------------------------------------------------------------------
// Model

struct RouterShape {
    std::size_t dim = 1024;
    std::vector<std::size_t> hidden = {512, 256}; // last entry is the joint width
    std::size_t num_series = kNumSeries;
    double dropout = 0.2;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    std::size_t joint() const { return hidden.back(); }
};

struct TrainingMetadata {
    std::uint64_t seed = 0;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    bool degenerate = false;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    nlohmann::json hyperparams = nlohmann::json::object();
};

template <class Scalar>
struct RouterModel {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    struct Dense {
        Mat w; // out x in
        Vec b;
    };
    struct Block {
        Dense lin;
        Vec gamma, beta, running_mean, running_var;
    };

    RouterShape shape;
    std::vector<Block> branch1;
    Dense branch2;
    Scalar alpha = 1;
    Scalar beta = 1;
    Dense head;
    TrainingMetadata meta;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; batchnorm
    /// at identity; alpha = beta = 1.
    static RouterModel init(const RouterShape& shape, std::uint64_t seed) {
        if (shape.hidden.empty() || shape.dim == 0 || shape.num_series == 0)
            throw ArgumentError("router shape needs dim, at least one hidden layer, and classes");
        RouterModel m;
        m.shape = shape;
        m.meta.seed = seed;
        SplitMix64 rng(seed);
        auto dense = [&](std::size_t in, std::size_t out) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            Dense d{Mat(out, in), Vec(out)};
            for (Eigen::Index c = 0; c < d.w.cols(); ++c)
                for (Eigen::Index r = 0; r < d.w.rows(); ++r)
                    d.w(r, c) = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
            for (Eigen::Index r = 0; r < d.b.size(); ++r) d.b(r) = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
            return d;
        };
        std::size_t in = shape.dim;
        for (std::size_t h : shape.hidden) {
            Block blk;
            blk.lin = dense(in, h);
            blk.gamma = Vec::Ones(h);
            blk.beta = Vec::Zero(h);
            blk.running_mean = Vec::Zero(h);
            blk.running_var = Vec::Ones(h);
            m.branch1.push_back(std::move(blk));
            in = h;
        }
        m.branch2 = dense(shape.num_series, shape.joint());
        m.head = dense(shape.joint(), shape.num_series);
        return m;
    }

    /// Visits every trainable parameter group as (name, data, size), in the
    /// fixed serialization order.
    template <class Fn>
    void for_each_trainable(Fn&& fn) {
        for (std::size_t i = 0; i < branch1.size(); ++i) {
            const std::string p = "branch1." + std::to_string(i) + ".";
            fn(p + "weight", branch1[i].lin.w.data(), static_cast<std::size_t>(branch1[i].lin.w.size()));
            fn(p + "bias", branch1[i].lin.b.data(), static_cast<std::size_t>(branch1[i].lin.b.size()));
            fn(p + "bn_gamma", branch1[i].gamma.data(), static_cast<std::size_t>(branch1[i].gamma.size()));
            fn(p + "bn_beta", branch1[i].beta.data(), static_cast<std::size_t>(branch1[i].beta.size()));
        }
        fn(std::string("branch2.weight"), branch2.w.data(), static_cast<std::size_t>(branch2.w.size()));
        fn(std::string("branch2.bias"), branch2.b.data(), static_cast<std::size_t>(branch2.b.size()));
        fn(std::string("fusion.alpha"), &alpha, std::size_t{1});
        fn(std::string("fusion.beta"), &beta, std::size_t{1});
        fn(std::string("head.weight"), head.w.data(), static_cast<std::size_t>(head.w.size()));
        fn(std::string("head.bias"), head.b.data(), static_cast<std::size_t>(head.b.size()));
    }

    template <class Other>
    RouterModel<Other> cast() const {
        RouterModel<Other> o;
        o.shape = shape;
        o.meta = meta;
        for (const auto& b : branch1)
            o.branch1.push_back({{b.lin.w.template cast<Other>(), b.lin.b.template cast<Other>()},
                                 b.gamma.template cast<Other>(),
                                 b.beta.template cast<Other>(),
                                 b.running_mean.template cast<Other>(),
                                 b.running_var.template cast<Other>()});
        o.branch2 = {branch2.w.template cast<Other>(), branch2.b.template cast<Other>()};
        o.alpha = static_cast<Other>(alpha);
        o.beta = static_cast<Other>(beta);
        o.head = {head.w.template cast<Other>(), head.b.template cast<Other>()};
        return o;
    }
};

using Router = RouterModel<float>;

namespace detail {

template <class Mat>
Mat softmax_columns(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        auto col = x.col(c);
        const auto mx = col.maxCoeff();
        auto e = (col.array() - mx).exp();
        out.col(c) = e / e.sum();
    }
    return out;
}

template <class Mat>
void require_finite(const Mat& m, const std::string& layer) {
    if (!m.allFinite()) throw NumericError("non-finite activation in " + layer);
}

} // namespace detail

/// Column-per-example batch. input1 is dim x B, input2 is num_series x B.
template <class Scalar>
struct RouterBatch {
    typename RouterModel<Scalar>::Mat input1;
    typename RouterModel<Scalar>::Mat input2;
    std::vector<int> labels; // class index 0..num_series-1
};

/// Inference forward pass: dropout off, batchnorm on running statistics.
/// Returns num_series x B probabilities.
template <class Scalar>
typename RouterModel<Scalar>::Mat forward_batch(const RouterModel<Scalar>& m,
                                                 const typename RouterModel<Scalar>::Mat& input1,
                                                 const typename RouterModel<Scalar>::Mat& input2) {
    using Mat = typename RouterModel<Scalar>::Mat;
    if (static_cast<std::size_t>(input1.rows()) != m.shape.dim ||
        static_cast<std::size_t>(input2.rows()) != m.shape.num_series || input1.cols() != input2.cols())
        throw IntegrityError("router input shape mismatch");
    Mat h = input1;
    for (std::size_t i = 0; i < m.branch1.size(); ++i) {
        const auto& blk = m.branch1[i];
        Mat z = (blk.lin.w * h).colwise() + blk.lin.b;
        z = z.cwiseMax(Scalar(0));
        const auto inv_std = (blk.running_var.array() + static_cast<Scalar>(m.shape.bn_eps)).rsqrt().matrix();
        h = (((z.colwise() - blk.running_mean).array().colwise() * (inv_std.array() * blk.gamma.array()))
                 .colwise() +
             blk.beta.array())
                .matrix();
        detail::require_finite(h, "branch1." + std::to_string(i));
    }
    const Mat s = detail::softmax_columns(input2);
    const Mat p = (m.branch2.w * s).colwise() + m.branch2.b;
    detail::require_finite(p, "branch2");
    const Mat joint = m.alpha * h + m.beta * p;
    const Mat logits = (m.head.w * joint).colwise() + m.head.b;
    detail::require_finite(logits, "head");
    return detail::softmax_columns(logits);
}

/// Single-query inference.
template <class Scalar>
std::vector<double> forward(const RouterModel<Scalar>& m, std::span<const float> input1, std::span<const float> input2) {
    using Mat = typename RouterModel<Scalar>::Mat;
    Mat x1(input1.size(), 1), x2(input2.size(), 1);
    for (std::size_t i = 0; i < input1.size(); ++i) x1(i, 0) = static_cast<Scalar>(input1[i]);
    for (std::size_t i = 0; i < input2.size(); ++i) x2(i, 0) = static_cast<Scalar>(input2[i]);
    const Mat p = forward_batch(m, x1, x2);
    std::vector<double> out(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) out[i] = static_cast<double>(p(i, 0));
    return out;
}

// ---------------------------------------------------------------------------
// Training pass with analytic gradients

template <class Scalar>
struct RouterGradients {
    RouterModel<Scalar> g; // same layout as the model; running stats unused
};

/// Loss and gradients of mean cross-entropy over `batch` in training mode
/// (dropout masks drawn from `dropout_seed`, batchnorm on batch statistics).
/// When `update_running` is set the model's running statistics move toward
/// the batch statistics.
template <class Scalar>
double train_step_gradients(RouterModel<Scalar>& m, const RouterBatch<Scalar>& batch, std::uint64_t dropout_seed,
                            std::type_identity_t<RouterModel<Scalar>>* grads, bool update_running) {
    using Mat = typename RouterModel<Scalar>::Mat;
    using Vec = typename RouterModel<Scalar>::Vec;
    const Eigen::Index B = batch.input1.cols();
    if (B < 1 || static_cast<std::size_t>(B) != batch.labels.size()) throw ArgumentError("empty or inconsistent batch");
    const Scalar keep = static_cast<Scalar>(1.0 - m.shape.dropout);
    const Scalar eps = static_cast<Scalar>(m.shape.bn_eps);
    SplitMix64 rng(dropout_seed);

    struct Cache {
        Mat x, z, mask, d, xhat;
        Vec inv_std;
    };
    std::vector<Cache> caches(m.branch1.size());
    Mat h = batch.input1;
    for (std::size_t i = 0; i < m.branch1.size(); ++i) {
        auto& blk = m.branch1[i];
        auto& c = caches[i];
        c.x = h;
        c.z = (blk.lin.w * h).colwise() + blk.lin.b;
        const Mat a = c.z.cwiseMax(Scalar(0));
        c.mask = Mat(a.rows(), a.cols());
        for (Eigen::Index col = 0; col < a.cols(); ++col)
            for (Eigen::Index r = 0; r < a.rows(); ++r)
                c.mask(r, col) = m.shape.dropout > 0 ? (rng.uniform() < static_cast<double>(keep) ? Scalar(1) / keep : Scalar(0))
                                                     : Scalar(1);
        c.d = a.cwiseProduct(c.mask);
        const Vec mu = c.d.rowwise().mean();
        const Mat centered = c.d.colwise() - mu;
        const Vec var = centered.array().square().rowwise().mean().matrix();
        c.inv_std = (var.array() + eps).rsqrt().matrix();
        c.xhat = (centered.array().colwise() * c.inv_std.array()).matrix();
        h = ((c.xhat.array().colwise() * blk.gamma.array()).colwise() + blk.beta.array()).matrix();
        detail::require_finite(h, "branch1." + std::to_string(i));
        if (update_running) {
            const Scalar mom = static_cast<Scalar>(m.shape.bn_momentum);
            const Scalar unbias = B > 1 ? static_cast<Scalar>(B) / static_cast<Scalar>(B - 1) : Scalar(1);
            blk.running_mean = (Scalar(1) - mom) * blk.running_mean + mom * mu;
            blk.running_var = (Scalar(1) - mom) * blk.running_var + mom * unbias * var;
        }
    }
    const Mat s = detail::softmax_columns(batch.input2);
    const Mat p = (m.branch2.w * s).colwise() + m.branch2.b;
    const Mat joint = m.alpha * h + m.beta * p;
    const Mat logits = (m.head.w * joint).colwise() + m.head.b;
    detail::require_finite(logits, "head");
    const Mat probs = detail::softmax_columns(logits);

    double loss = 0.0;
    for (Eigen::Index c = 0; c < B; ++c) {
        const int y = batch.labels[c];
        if (y < 0 || y >= probs.rows()) throw ArgumentError("label out of range");
        loss -= std::log(std::max(static_cast<double>(probs(y, c)), 1e-300));
    }
    loss /= static_cast<double>(B);
    if (!grads) return loss;

    Mat d_logits = probs;
    for (Eigen::Index c = 0; c < B; ++c) d_logits(batch.labels[c], c) -= Scalar(1);
    d_logits /= static_cast<Scalar>(B);

    auto& g = *grads;
    g.head.w = d_logits * joint.transpose();
    g.head.b = d_logits.rowwise().sum();
    const Mat d_joint = m.head.w.transpose() * d_logits;
    g.alpha = d_joint.cwiseProduct(h).sum();
    g.beta = d_joint.cwiseProduct(p).sum();
    const Mat d_p = m.beta * d_joint;
    g.branch2.w = d_p * s.transpose();
    g.branch2.b = d_p.rowwise().sum();

    Mat d_h = m.alpha * d_joint;
    g.branch1.resize(m.branch1.size());
    for (std::size_t i = m.branch1.size(); i-- > 0;) {
        const auto& blk = m.branch1[i];
        const auto& c = caches[i];
        auto& gb = g.branch1[i];
        gb.gamma = d_h.cwiseProduct(c.xhat).rowwise().sum();
        gb.beta = d_h.rowwise().sum();
        const Mat d_xhat = (d_h.array().colwise() * blk.gamma.array()).matrix();
        const Vec sum_dx = d_xhat.rowwise().sum();
        const Vec sum_dx_x = d_xhat.cwiseProduct(c.xhat).rowwise().sum();
        const Scalar bs = static_cast<Scalar>(B);
        Mat d_d = ((bs * d_xhat.array()).colwise() - sum_dx.array()).matrix();
        d_d -= (c.xhat.array().colwise() * sum_dx_x.array()).matrix();
        d_d = ((d_d.array().colwise() * c.inv_std.array()) / bs).matrix();
        Mat d_z = d_d.cwiseProduct(c.mask);
        d_z = (c.z.array() > Scalar(0)).select(d_z, Mat::Zero(d_z.rows(), d_z.cols()));
        gb.lin.w = d_z * c.x.transpose();
        gb.lin.b = d_z.rowwise().sum();
        if (i > 0) d_h = blk.lin.w.transpose() * d_z;
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Examples, training, evaluation

struct RouterExample {
    std::string query;
    Vector embedding;
    int label = 0; // series id 21..38
};

/// Line-delimited {"query", "label", "embedding"?}; missing embeddings are
/// computed with `embedder`.
inline std::vector<RouterExample> load_router_examples(const std::filesystem::path& p, EmbedClient* embedder) {
    std::vector<RouterExample> out;
    std::vector<std::size_t> need;
    for (const auto& rec : read_jsonl(p)) {
        RouterExample ex;
        ex.query = rec.value("query", std::string{});
        ex.label = rec.at("label").get<int>();
        if (!valid_series(ex.label)) throw IntegrityError("router example label " + std::to_string(ex.label) + " outside [21, 38]");
        if (rec.contains("embedding")) {
            ex.embedding = rec.at("embedding").get<Vector>();
        } else {
            need.push_back(out.size());
        }
        out.push_back(std::move(ex));
    }
    if (!need.empty()) {
        if (!embedder) throw ConfigError("router examples without embeddings need an embedding provider");
        std::vector<std::string> texts;
        for (auto i : need) texts.push_back(out[i].query);
        auto vecs = embedder->embed(texts);
        for (std::size_t n = 0; n < need.size(); ++n) out[need[n]].embedding = std::move(vecs[n].components);
    }
    return out;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    double validation_fraction = 0.1;
    std::size_t patience = 5;
    std::uint64_t seed = 42;

    nlohmann::json to_json() const {
        return {{"optimizer", "sgd_momentum"}, {"learning_rate", learning_rate}, {"momentum", momentum},
                {"batch_size", batch_size},    {"epochs", epochs},              {"validation_fraction", validation_fraction},
                {"patience", patience},         {"seed", seed},                  {"loss", "categorical_cross_entropy"}};
    }
};

template <class Scalar>
RouterBatch<Scalar> make_batch(const std::vector<RouterExample>& examples, std::span<const std::size_t> idx,
                               const SeriesSummaries& summaries) {
    RouterBatch<Scalar> b;
    const std::size_t d = summaries.dim();
    b.input1.resize(d, idx.size());
    b.input2.resize(kNumSeries, idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
        const auto& ex = examples[idx[c]];
        const auto in = build_inputs(ex.embedding, summaries);
        for (std::size_t r = 0; r < d; ++r) b.input1(r, c) = static_cast<Scalar>(in.query[r]);
        for (int r = 0; r < kNumSeries; ++r) b.input2(r, c) = static_cast<Scalar>(in.alignment[r]);
        b.labels.push_back(ex.label - kFirstSeries);
    }
    return b;
}

/// Fisher-Yates with SplitMix64, so the batch order is the same everywhere.
inline void deterministic_shuffle(std::vector<std::size_t>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

/// Trains `model` in place. Holds out `validation_fraction` of the examples,
/// stops after `patience` epochs without validation improvement, and
/// restores the best-validation parameters.
template <class Scalar>
void train_router(RouterModel<Scalar>& model, const std::vector<RouterExample>& examples,
                  const SeriesSummaries& summaries, const TrainConfig& cfg) {
    if (examples.empty()) throw ArgumentError("train_router: no examples");
    if (summaries.dim() != model.shape.dim) throw IntegrityError("summary dim does not match router dim");
    if (cfg.batch_size < 2) throw ArgumentError("batch_size must be >= 2 for batch normalization");
    std::set<int> classes;
    for (const auto& ex : examples) {
        if (!valid_series(ex.label)) throw IntegrityError("label outside [21, 38]");
        if (ex.embedding.size() != model.shape.dim) throw IntegrityError("example embedding dim mismatch");
        classes.insert(ex.label);
    }

    SplitMix64 rng(cfg.seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    deterministic_shuffle(order, rng);
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(examples.size())));
    std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    if (train.size() < 2) throw ArgumentError("train_router: need at least two training examples");
    const auto val_batch = n_val > 0 ? std::optional(make_batch<Scalar>(examples, val, summaries)) : std::nullopt;

    RouterModel<Scalar> velocity = model;
    velocity.for_each_trainable([](const std::string&, Scalar* p, std::size_t n) { std::fill(p, p + n, Scalar(0)); });
    RouterModel<Scalar> grads = model;

    model.meta = {};
    model.meta.seed = cfg.seed;
    model.meta.degenerate = classes.size() < 2;
    model.meta.hyperparams = cfg.to_json();
    RouterModel<Scalar> best = model;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    auto validation_loss = [&](RouterModel<Scalar>& m) {
        const auto probs = forward_batch(m, val_batch->input1, val_batch->input2);
        double l = 0.0;
        for (Eigen::Index c = 0; c < probs.cols(); ++c)
            l -= std::log(std::max(static_cast<double>(probs(val_batch->labels[c], c)), 1e-300));
        return l / static_cast<double>(probs.cols());
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        deterministic_shuffle(train, rng);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t lo = 0; lo < train.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(train.size(), lo + cfg.batch_size);
            if (hi - lo < 2) break; // a single-row batch has no batch variance
            const auto batch = make_batch<Scalar>(examples, std::span(train).subspan(lo, hi - lo), summaries);
            const double loss = train_step_gradients(model, batch, rng.next(), &grads, true);
            if (!std::isfinite(loss)) throw TrainingError("loss became non-finite in epoch " + std::to_string(epoch));
            epoch_loss += loss * static_cast<double>(hi - lo);
            seen += hi - lo;

            const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
            const Scalar mom = static_cast<Scalar>(cfg.momentum);
            std::vector<Scalar*> gp, vp;
            std::vector<std::size_t> sizes;
            grads.for_each_trainable([&](const std::string&, Scalar* p, std::size_t n) { gp.push_back(p); sizes.push_back(n); });
            velocity.for_each_trainable([&](const std::string&, Scalar* p, std::size_t) { vp.push_back(p); });
            std::size_t group = 0;
            model.for_each_trainable([&](const std::string&, Scalar* p, std::size_t n) {
                Scalar* v = vp[group];
                const Scalar* g = gp[group];
                for (std::size_t k = 0; k < n; ++k) {
                    v[k] = mom * v[k] + g[k];
                    p[k] -= lr * v[k];
                }
                ++group;
            });
        }
        const double mean_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(seen, 1));
        if (!std::isfinite(mean_loss)) throw TrainingError("loss became non-finite in epoch " + std::to_string(epoch));
        model.meta.train_loss.push_back(mean_loss);
        model.meta.epochs_run = epoch;

        if (val_batch) {
            const double vl = validation_loss(model);
            model.meta.val_loss.push_back(vl);
            if (vl < best_val) {
                best_val = vl;
                best = model;
                best.meta.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        } else {
            best = model;
            best.meta.best_epoch = epoch;
        }
    }
    const auto curves = model.meta;
    model = std::move(best);
    model.meta.train_loss = curves.train_loss;
    model.meta.val_loss = curves.val_loss;
    model.meta.epochs_run = curves.epochs_run;
}

/// Series ids ordered by descending probability, ties by ascending id.
inline std::vector<int> rank_series(std::span<const double> probs) {
    std::vector<int> idx(probs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs[a] > probs[b]; });
    for (auto& i : idx) i += kFirstSeries;
    return idx;
}

template <class Scalar>
std::vector<int> predict_topk(const RouterModel<Scalar>& m, std::span<const float> query_embedding,
                              const SeriesSummaries& summaries, std::size_t k) {
    if (k < 1 || k > static_cast<std::size_t>(kNumSeries)) throw ArgumentError("k must be in [1, 18]");
    const auto in = build_inputs(query_embedding, summaries);
    auto ranked = rank_series(forward(m, in.query, in.alignment));
    ranked.resize(k);
    return ranked;
}

/// Full rankings for many examples in one batched pass.
template <class Scalar>
std::vector<std::vector<int>> rank_examples(const RouterModel<Scalar>& m, const std::vector<RouterExample>& examples,
                                            const SeriesSummaries& summaries) {
    std::vector<std::vector<int>> out;
    out.reserve(examples.size());
    constexpr std::size_t chunk = 256;
    for (std::size_t lo = 0; lo < examples.size(); lo += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, examples.size() - lo));
        std::iota(idx.begin(), idx.end(), lo);
        const auto b = make_batch<Scalar>(examples, idx, summaries);
        const auto probs = forward_batch(m, b.input1, b.input2);
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            std::vector<double> p(probs.rows());
            for (Eigen::Index r = 0; r < probs.rows(); ++r) p[r] = static_cast<double>(probs(r, c));
            out.push_back(rank_series(p));
        }
    }
    return out;
}

struct TopkEvaluation {
    std::map<std::size_t, double> accuracy;                // k -> fraction in [0, 1]
    std::vector<std::vector<double>> confusion;            // 18x18, row-normalized percent (true x predicted top-1)
    std::vector<std::size_t> support;                      // examples per true series
    std::size_t total = 0;
};

/// Scores rankings (each a permutation or prefix of series ids) against
/// labels. Rows of the confusion matrix with no examples stay zero.
inline TopkEvaluation evaluate_rankings(const std::vector<std::vector<int>>& rankings, const std::vector<int>& labels,
                                        const std::vector<std::size_t>& k_values) {
    if (rankings.empty()) throw ArgumentError("evaluate: empty example set");
    if (rankings.size() != labels.size()) throw ArgumentError("evaluate: rankings/labels size mismatch");
    TopkEvaluation ev;
    ev.total = labels.size();
    ev.support.assign(kNumSeries, 0);
    std::vector<std::vector<std::size_t>> counts(kNumSeries, std::vector<std::size_t>(kNumSeries, 0));
    for (std::size_t k : k_values) {
        if (k < 1 || k > static_cast<std::size_t>(kNumSeries)) throw ArgumentError("k must be in [1, 18]");
        std::size_t hit = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto& r = rankings[i];
            const auto end = r.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.size()));
            if (std::find(r.begin(), end, labels[i]) != end) ++hit;
        }
        ev.accuracy[k] = static_cast<double>(hit) / static_cast<double>(labels.size());
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i] - kFirstSeries;
        ++ev.support[t];
        if (!rankings[i].empty()) ++counts[t][rankings[i].front() - kFirstSeries];
    }
    ev.confusion.assign(kNumSeries, std::vector<double>(kNumSeries, 0.0));
    for (int r = 0; r < kNumSeries; ++r)
        if (ev.support[r] > 0)
            for (int c = 0; c < kNumSeries; ++c)
                ev.confusion[r][c] = 100.0 * static_cast<double>(counts[r][c]) / static_cast<double>(ev.support[r]);
    return ev;
}

template <class Scalar>
TopkEvaluation evaluate_topk(const RouterModel<Scalar>& m, const std::vector<RouterExample>& examples,
                             const SeriesSummaries& summaries, const std::vector<std::size_t>& k_values) {
    if (examples.empty()) throw ArgumentError("evaluate_topk: empty example set");
    std::vector<int> labels;
    for (const auto& ex : examples) labels.push_back(ex.label);
    return evaluate_rankings(rank_examples(m, examples, summaries), labels, k_values);
}

/// Copy of `m` with one fusion branch silenced.
template <class Scalar>
RouterModel<Scalar> ablate(const RouterModel<Scalar>& m, bool zero_alpha, bool zero_beta) {
    RouterModel<Scalar> out = m;
    if (zero_alpha) out.alpha = Scalar(0);
    if (zero_beta) out.beta = Scalar(0);
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: "TRRM", u32 version, u32 dim, u32 num_series, u32 n_hidden,
// u32 hidden[n_hidden], f32 dropout, f32 bn_momentum, f32 bn_eps, u64 seed,
// then f32 parameter blocks (per branch-1 block: weight row-major, bias,
// gamma, beta, running mean, running var; branch-2 weight, bias; alpha; beta;
// head weight, bias), then u32 length + JSON training metadata.

inline constexpr std::uint32_t kRouterVersion = 1;

inline std::string save_router_bytes(const Router& m) {
    std::string out("TRRM");
    auto u32 = [&](std::size_t v) { detail::put_u32(out, static_cast<std::uint32_t>(v)); };
    u32(kRouterVersion);
    u32(m.shape.dim);
    u32(m.shape.num_series);
    u32(m.shape.hidden.size());
    for (auto h : m.shape.hidden) u32(h);
    detail::put_f32(out, static_cast<float>(m.shape.dropout));
    detail::put_f32(out, static_cast<float>(m.shape.bn_momentum));
    detail::put_f32(out, static_cast<float>(m.shape.bn_eps));
    detail::put_u32(out, static_cast<std::uint32_t>(m.meta.seed & 0xffffffffu));
    detail::put_u32(out, static_cast<std::uint32_t>(m.meta.seed >> 32));
    auto mat = [&](const Router::Mat& w) {
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) detail::put_f32(out, w(r, c));
    };
    auto vec = [&](const Router::Vec& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f32(out, v(i));
    };
    for (const auto& b : m.branch1) {
        mat(b.lin.w);
        vec(b.lin.b);
        vec(b.gamma);
        vec(b.beta);
        vec(b.running_mean);
        vec(b.running_var);
    }
    mat(m.branch2.w);
    vec(m.branch2.b);
    detail::put_f32(out, m.alpha);
    detail::put_f32(out, m.beta);
    mat(m.head.w);
    vec(m.head.b);
    const nlohmann::json meta = {{"epochs_run", m.meta.epochs_run}, {"best_epoch", m.meta.best_epoch},
                                 {"degenerate", m.meta.degenerate}, {"train_loss", m.meta.train_loss},
                                 {"val_loss", m.meta.val_loss},     {"hyperparams", m.meta.hyperparams}};
    const std::string meta_str = meta.dump();
    u32(meta_str.size());
    out += meta_str;
    return out;
}

inline Router load_router_bytes(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) throw IntegrityError("router file truncated");
    };
    auto u32 = [&] {
        need(4);
        const auto v = detail::get_u32(p + pos);
        pos += 4;
        return v;
    };
    auto f32 = [&] {
        need(4);
        const auto v = detail::get_f32(p + pos);
        pos += 4;
        return v;
    };
    need(4);
    if (bytes.substr(0, 4) != "TRRM") throw IntegrityError("not a router model file");
    pos = 4;
    if (u32() != kRouterVersion) throw IntegrityError("unsupported router model version");
    RouterShape shape;
    shape.dim = u32();
    shape.num_series = u32();
    const auto n_hidden = u32();
    if (n_hidden == 0 || n_hidden > 64) throw IntegrityError("router file has implausible layer count");
    shape.hidden.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i) shape.hidden.push_back(u32());
    shape.dropout = f32();
    shape.bn_momentum = f32();
    shape.bn_eps = f32();
    const std::uint64_t seed_lo = u32();
    const std::uint64_t seed = seed_lo | (static_cast<std::uint64_t>(u32()) << 32);

    Router m = Router::init(shape, 0);
    auto mat = [&](Router::Mat& w) {
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = f32();
    };
    auto vec = [&](Router::Vec& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f32();
    };
    for (auto& b : m.branch1) {
        mat(b.lin.w);
        vec(b.lin.b);
        vec(b.gamma);
        vec(b.beta);
        vec(b.running_mean);
        vec(b.running_var);
    }
    mat(m.branch2.w);
    vec(m.branch2.b);
    m.alpha = f32();
    m.beta = f32();
    mat(m.head.w);
    vec(m.head.b);
    if (!std::isfinite(m.alpha) || !std::isfinite(m.beta)) throw IntegrityError("router fusion scalars are not finite");
    const auto meta_len = u32();
    need(meta_len);
    try {
        const auto meta = nlohmann::json::parse(bytes.substr(pos, meta_len));
        m.meta.epochs_run = meta.value("epochs_run", std::size_t{0});
        m.meta.best_epoch = meta.value("best_epoch", std::size_t{0});
        m.meta.degenerate = meta.value("degenerate", false);
        m.meta.train_loss = meta.value("train_loss", std::vector<double>{});
        m.meta.val_loss = meta.value("val_loss", std::vector<double>{});
        m.meta.hyperparams = meta.value("hyperparams", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("router metadata: ") + e.what());
    }
    pos += meta_len;
    if (pos != bytes.size()) throw IntegrityError("router file has trailing bytes");
    m.meta.seed = seed;
    return m;
}

inline void save_router(const std::filesystem::path& p, const Router& m) { write_file(p, save_router_bytes(m)); }
inline Router load_router(const std::filesystem::path& p) { return load_router_bytes(read_file(p)); }

} // namespace telco_rag
