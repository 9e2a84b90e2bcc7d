// SPDX-License-Identifier: Apache-2.0
//
// Toy quantization-aware training: a two-layer tanh MLP trained on a
// teacher-student regression task with hand-written gradients.
//
// Weight matrices are stored as (out x in), so MX blocks run along the input
// dimension. Each forward pass uses effective weights
//
//   None      W
//   Direct    dequantize(Q_f(W))
//   Anchored  dequantize(Q_{A->t}(Q_A(W)))
//
// and the backward pass treats every quantizer as identity (STE), applying the
// gradient taken at the effective weights to the full-precision masters.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mx/convert.hpp"
#include "mx/error.hpp"
#include "mx/format.hpp"
#include "mx/quant.hpp"
#include "mx/tensor.hpp"

namespace mx::qat {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    Tensor to_tensor() const { return Tensor({rows, cols}, data); }
    static Matrix from_tensor(const Tensor& t) {
        Matrix m(t.shape.at(0), t.shape.at(1));
        m.data = t.values;
        return m;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Full-precision master weights.
struct ToyModel {
    Matrix w1;  // d_hid x d_in
    std::vector<double> b1;
    Matrix w2;  // d_out x d_hid
    std::vector<double> b2;

    std::size_t d_in() const { return w1.cols; }
    std::size_t d_hid() const { return w1.rows; }
    std::size_t d_out() const { return w2.rows; }

    friend bool operator==(const ToyModel&, const ToyModel&) = default;
};

struct Gradients {
    Matrix w1;
    std::vector<double> b1;
    Matrix w2;
    std::vector<double> b2;
};

class QuantAttachment {
public:
    enum class Mode { None, Direct, Anchored };

    static QuantAttachment none() { return QuantAttachment(); }

    static QuantAttachment direct(const MxFormatSpec& spec) {
        validate(spec);
        QuantAttachment a;
        a.mode_ = Mode::Direct;
        a.target_ = spec;
        return a;
    }

    static QuantAttachment anchored(const MxFormatSpec& anchor, const MxFormatSpec& target) {
        validate(anchor);
        validate(target);
        if (anchor.block_size != target.block_size) throw ConversionError("anchor and target block sizes differ");
        ConversionPlan::make(anchor.element, target.element, target.tie);
        QuantAttachment a;
        a.mode_ = Mode::Anchored;
        a.anchor_ = anchor;
        a.target_ = target;
        return a;
    }

    Mode mode() const { return mode_; }
    const MxFormatSpec& target() const { return target_; }
    const MxFormatSpec& anchor() const { return anchor_; }

    Matrix apply(const Matrix& w) const {
        switch (mode_) {
            case Mode::None:
                return w;
            case Mode::Direct:
                return Matrix::from_tensor(fake_quantize(w.to_tensor(), target_));
            case Mode::Anchored: {
                const MxTensor a = quantize_tensor(w.to_tensor(), anchor_);
                return Matrix::from_tensor(dequantize_tensor(ss_convert(a, target_.element, target_.tie)));
            }
        }
        return w;
    }

    std::string name() const {
        switch (mode_) {
            case Mode::None: return "fp";
            case Mode::Direct: return format_name(target_.element);
            case Mode::Anchored: return format_name(anchor_.element) + "->" + format_name(target_.element);
        }
        return "?";
    }

private:
    Mode mode_ = Mode::None;
    MxFormatSpec anchor_;
    MxFormatSpec target_;
};

struct Dataset {
    Matrix inputs;   // n x d_in
    Matrix targets;  // n x d_out

    std::size_t size() const { return inputs.rows; }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset d{Matrix(idx.size(), inputs.cols), Matrix(idx.size(), targets.cols)};
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(&inputs.data[idx[i] * inputs.cols], inputs.cols, &d.inputs.data[i * inputs.cols]);
            std::copy_n(&targets.data[idx[i] * targets.cols], targets.cols, &d.targets.data[i * targets.cols]);
        }
        return d;
    }
};

struct AdamWParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    std::uint64_t seed = 0;

    // Dataset: frozen random teacher of the student's architecture plus noise.
    std::uint64_t teacher_seed = 1;
    std::size_t d_in = 16;
    std::size_t d_hid = 32;
    std::size_t d_out = 1;
    std::size_t samples = 128;
    std::size_t eval_samples = 1024;
    double noise_sigma = 0.01;

    // Full-precision steps that produce the "pretrained" starting checkpoint.
    std::size_t pretrain_epochs = 50;
    double pretrain_lr = 1e-2;

    // One epoch per format, mini-batches of 4.
    std::size_t steps_per_epoch = 32;
    std::size_t epochs_per_format = 1;
    std::vector<ElementFormat> schedule{ElementFormat::integer(2), ElementFormat::integer(4),
                                        ElementFormat::integer(6), ElementFormat::integer(8)};
    AdamWParams optim;
    std::vector<double> lr_sweep{1e-2, 1e-3, 1e-4};

    std::size_t block_size = 32;
    TieMode tie = TieMode::HalfAway;

    MxFormatSpec spec_for(const ElementFormat& f) const { return MxFormatSpec{f, block_size, tie}; }
};

// ---------------------------------------------------------------------------
// Data and initialization

namespace detail {

inline void fill_normal(std::span<double> out, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : out) v = dist(rng);
}

inline ToyModel random_model(std::size_t d_in, std::size_t d_hid, std::size_t d_out, std::mt19937_64& rng) {
    ToyModel m{Matrix(d_hid, d_in), std::vector<double>(d_hid), Matrix(d_out, d_hid), std::vector<double>(d_out)};
    fill_normal(m.w1.data, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    fill_normal(m.b1, rng, 0.1);
    fill_normal(m.w2.data, rng, 1.0 / std::sqrt(static_cast<double>(d_hid)));
    return m;
}

inline constexpr std::uint64_t kTrainSplit = 0x7261696eULL;
inline constexpr std::uint64_t kEvalSplit = 0x6576616cULL;

}  // namespace detail

inline ToyModel teacher_model(const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.teacher_seed);
    return detail::random_model(cfg.d_in, cfg.d_hid, cfg.d_out, rng);
}

inline Matrix predict(const ToyModel& model, const Matrix& inputs);

namespace detail {

inline Dataset make_split(const TrainConfig& cfg, std::size_t n, std::uint64_t split) {
    std::mt19937_64 rng(cfg.teacher_seed ^ (split * 0x9e3779b97f4a7c15ULL));
    Dataset d{Matrix(n, cfg.d_in), Matrix(n, cfg.d_out)};
    fill_normal(d.inputs.data, rng, 1.0);
    d.targets = predict(teacher_model(cfg), d.inputs);
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (double& t : d.targets.data) t += noise(rng);
    }
    return d;
}

}  // namespace detail

// Training split: `samples` i.i.d. N(0, 1) inputs labelled by the teacher.
inline Dataset make_dataset(const TrainConfig& cfg) { return detail::make_split(cfg, cfg.samples, detail::kTrainSplit); }

// Held-out split from the same teacher.
inline Dataset make_eval_dataset(const TrainConfig& cfg) {
    return detail::make_split(cfg, cfg.eval_samples, detail::kEvalSplit);
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
    Matrix inputs;
    Matrix targets;
    Matrix w1_eff;
    Matrix w2_eff;
    Matrix hidden;  // tanh activations, n x d_hid
    Matrix output;  // n x d_out
};

inline Matrix predict_with(const Matrix& w1, std::span<const double> b1, const Matrix& w2, std::span<const double> b2,
                           const Matrix& x, Matrix* hidden_out) {
    const std::size_t n = x.rows, d_in = w1.cols, d_hid = w1.rows, d_out = w2.rows;
    Matrix h(n, d_hid), y(n, d_out);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < d_hid; ++j) {
            double acc = b1[j];
            for (std::size_t i = 0; i < d_in; ++i) acc += w1(j, i) * x(s, i);
            h(s, j) = std::tanh(acc);
        }
        for (std::size_t o = 0; o < d_out; ++o) {
            double acc = b2[o];
            for (std::size_t j = 0; j < d_hid; ++j) acc += w2(o, j) * h(s, j);
            y(s, o) = acc;
        }
    }
    if (hidden_out) *hidden_out = std::move(h);
    return y;
}

inline Matrix predict(const ToyModel& model, const Matrix& inputs) {
    return predict_with(model.w1, model.b1, model.w2, model.b2, inputs, nullptr);
}

inline double mean_squared_error(const Matrix& y, const Matrix& t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        const double d = y.data[i] - t.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(y.data.size());
}

struct ForwardResult {
    double loss = 0.0;
    ForwardCache cache;
};

inline ForwardResult forward_loss(const ToyModel& model, const QuantAttachment& attachment, const Dataset& batch) {
    ForwardResult r;
    r.cache.inputs = batch.inputs;
    r.cache.targets = batch.targets;
    r.cache.w1_eff = attachment.apply(model.w1);
    r.cache.w2_eff = attachment.apply(model.w2);
    r.cache.output = predict_with(r.cache.w1_eff, model.b1, r.cache.w2_eff, model.b2, batch.inputs, &r.cache.hidden);
    r.loss = mean_squared_error(r.cache.output, batch.targets);
    return r;
}

// Gradients w.r.t. the master weights, with quantizers treated as identity.
inline Gradients backward_ste(const ToyModel& model, const ForwardCache& cache) {
    const std::size_t n = cache.inputs.rows, d_in = model.d_in(), d_hid = model.d_hid(), d_out = model.d_out();
    Gradients g{Matrix(d_hid, d_in), std::vector<double>(d_hid, 0.0), Matrix(d_out, d_hid),
                std::vector<double>(d_out, 0.0)};
    const double norm = 2.0 / static_cast<double>(n * d_out);
    std::vector<double> dy(d_out), dz(d_hid);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < d_out; ++o) {
            dy[o] = norm * (cache.output(s, o) - cache.targets(s, o));
            g.b2[o] += dy[o];
            for (std::size_t j = 0; j < d_hid; ++j) g.w2(o, j) += dy[o] * cache.hidden(s, j);
        }
        for (std::size_t j = 0; j < d_hid; ++j) {
            double dh = 0.0;
            for (std::size_t o = 0; o < d_out; ++o) dh += dy[o] * cache.w2_eff(o, j);
            const double h = cache.hidden(s, j);
            dz[j] = dh * (1.0 - h * h);
            g.b1[j] += dz[j];
            for (std::size_t i = 0; i < d_in; ++i) g.w1(j, i) += dz[j] * cache.inputs(s, i);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay on weights only)

struct AdamWState {
    Gradients m;
    Gradients v;
    std::size_t t = 0;

    static AdamWState zeros_like(const ToyModel& model) {
        Gradients z{Matrix(model.w1.rows, model.w1.cols), std::vector<double>(model.b1.size(), 0.0),
                    Matrix(model.w2.rows, model.w2.cols), std::vector<double>(model.b2.size(), 0.0)};
        return AdamWState{z, z, 0};
    }
};

namespace detail {

inline void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                         const AdamWParams& hp, double decay, std::size_t t) {
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= hp.lr * decay * p[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
    }
}

}  // namespace detail

inline void optimizer_step(ToyModel& model, AdamWState& state, const Gradients& g, const AdamWParams& hp) {
    ++state.t;
    detail::adamw_update(model.w1.data, g.w1.data, state.m.w1.data, state.v.w1.data, hp, hp.weight_decay, state.t);
    detail::adamw_update(model.w2.data, g.w2.data, state.m.w2.data, state.v.w2.data, hp, hp.weight_decay, state.t);
    detail::adamw_update(model.b1, g.b1, state.m.b1, state.v.b1, hp, 0.0, state.t);
    detail::adamw_update(model.b2, g.b2, state.m.b2, state.v.b2, hp, 0.0, state.t);
}

// ---------------------------------------------------------------------------
// Training variants

struct Variant {
    enum class Kind { FullPrecision, SingleFormat, MultiFormat, MultiFormatAnchored };

    Kind kind = Kind::FullPrecision;
    std::optional<ElementFormat> format;  // SingleFormat target / anchor for MultiFormatAnchored

    static Variant full_precision() { return Variant{}; }
    static Variant single_format(const ElementFormat& f) { return Variant{Kind::SingleFormat, f}; }
    static Variant multi_format() { return Variant{Kind::MultiFormat, std::nullopt}; }
    static Variant multi_format_anchored(const ElementFormat& anchor) {
        return Variant{Kind::MultiFormatAnchored, anchor};
    }

    std::string name() const {
        switch (kind) {
            case Kind::FullPrecision: return "full-precision";
            case Kind::SingleFormat: return "single-" + format_name(*format);
            case Kind::MultiFormat: return "multi-format";
            case Kind::MultiFormatAnchored: return "anchored-" + format_name(*format);
        }
        return "?";
    }
};

struct LogRow {
    std::size_t step = 0;
    std::string format;
    int bits = 0;
    double loss = 0.0;
};

struct TrainResult {
    ToyModel model;
    std::vector<LogRow> log;
    std::vector<std::size_t> switch_steps;  // first step of each schedule entry after the first
};

// Multi-format schedules must be strictly increasing in bitwidth.
inline void check_schedule(const std::vector<ElementFormat>& schedule) {
    if (schedule.empty()) throw ConversionError("empty training schedule");
    for (std::size_t i = 1; i < schedule.size(); ++i) {
        if (schedule[i].kind() != schedule[0].kind()) throw ConversionError("schedule mixes integer and float formats");
        if (schedule[i].bits() <= schedule[i - 1].bits())
            throw ConversionError("schedule must be strictly increasing in bitwidth: " +
                                  format_name(schedule[i - 1]) + " then " + format_name(schedule[i]));
    }
}

// Seeded random init followed by `pretrain_epochs` of full-precision training.
inline ToyModel initial_model(const TrainConfig& cfg);

namespace detail {

struct Phase {
    QuantAttachment attachment;
    std::size_t epochs = 0;
    std::string format;
    int bits = 0;
};

inline std::vector<Phase> phases_for(const Variant& v, const TrainConfig& cfg) {
    const std::size_t total = cfg.epochs_per_format * cfg.schedule.size();
    std::vector<Phase> phases;
    switch (v.kind) {
        case Variant::Kind::FullPrecision:
            phases.push_back({QuantAttachment::none(), total, "fp", 0});
            break;
        case Variant::Kind::SingleFormat:
            phases.push_back({QuantAttachment::direct(cfg.spec_for(*v.format)), total, format_name(*v.format),
                              v.format->bits()});
            break;
        case Variant::Kind::MultiFormat:
            check_schedule(cfg.schedule);
            for (const auto& f : cfg.schedule)
                phases.push_back({QuantAttachment::direct(cfg.spec_for(f)), cfg.epochs_per_format, format_name(f),
                                  f.bits()});
            break;
        case Variant::Kind::MultiFormatAnchored:
            check_schedule(cfg.schedule);
            for (const auto& f : cfg.schedule)
                phases.push_back({QuantAttachment::anchored(cfg.spec_for(*v.format), cfg.spec_for(f)),
                                  cfg.epochs_per_format, format_name(f), f.bits()});
            break;
    }
    return phases;
}

inline void check_finite(const ToyModel& m, const std::string& what, std::size_t step) {
    const auto bad = [](std::span<const double> s) {
        return std::any_of(s.begin(), s.end(), [](double x) { return !std::isfinite(x); });
    };
    if (bad(m.w1.data) || bad(m.w2.data) || bad(m.b1) || bad(m.b2))
        throw TrainingError(what + " diverged: non-finite parameter at step " + std::to_string(step));
}

// Runs the given phases from `start`, mini-batching a per-epoch permutation.
inline TrainResult run_phases(const std::vector<Phase>& phases, const std::string& label, const TrainConfig& cfg,
                              const AdamWParams& hp, const ToyModel& start, const Dataset& data) {
    TrainResult result{start, {}, {}};
    AdamWState state = AdamWState::zeros_like(start);
    std::mt19937_64 rng(cfg.seed * 0x2545f4914f6cdd1dULL + 0x5bd1e995ULL);
    std::vector<std::size_t> order(data.size());
    const std::size_t steps = std::max<std::size_t>(1, std::min(cfg.steps_per_epoch, data.size()));
    std::size_t step = 0;
    for (std::size_t p = 0; p < phases.size(); ++p) {
        const Phase& phase = phases[p];
        if (p > 0 && phase.epochs > 0) result.switch_steps.push_back(step);
        for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t s = 0; s < steps; ++s) {
                const std::size_t begin = s * data.size() / steps, end = (s + 1) * data.size() / steps;
                const Dataset batch = data.subset(std::span<const std::size_t>(order).subspan(begin, end - begin));
                const auto fwd = forward_loss(result.model, phase.attachment, batch);
                if (!std::isfinite(fwd.loss))
                    throw TrainingError(label + " diverged: non-finite loss at step " + std::to_string(step));
                result.log.push_back({step, phase.format, phase.bits, fwd.loss});
                optimizer_step(result.model, state, backward_ste(result.model, fwd.cache), hp);
                check_finite(result.model, label, step);
                ++step;
            }
        }
    }
    return result;
}

}  // namespace detail

inline ToyModel initial_model(const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed ^ 0xa0761d6478bd642fULL);
    ToyModel model = detail::random_model(cfg.d_in, cfg.d_hid, cfg.d_out, rng);
    if (cfg.pretrain_epochs == 0) return model;
    AdamWParams hp = cfg.optim;
    hp.lr = cfg.pretrain_lr;
    const std::vector<detail::Phase> phases{{QuantAttachment::none(), cfg.pretrain_epochs, "fp", 0}};
    return detail::run_phases(phases, "pretrain", cfg, hp, model, make_dataset(cfg)).model;
}

// Trains `variant` from `start` with step size cfg.optim.lr.
inline TrainResult train_run(const Variant& variant, const TrainConfig& cfg, const ToyModel& start,
                             const Dataset& data) {
    return detail::run_phases(detail::phases_for(variant, cfg), variant.name(), cfg, cfg.optim, start, data);
}

inline TrainResult train_run(const Variant& variant, const TrainConfig& cfg) {
    return train_run(variant, cfg, initial_model(cfg), make_dataset(cfg));
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
    std::string format;
    int bits = 0;
    double loss = 0.0;
};

using EvalCurve = std::vector<EvalRow>;

inline double eval_loss(const ToyModel& model, const QuantAttachment& attachment, const Dataset& data) {
    return forward_loss(model, attachment, data).loss;
}

// PTQ: quantize-dequantize the weights into each format and evaluate.
inline EvalCurve ptq_sweep(const ToyModel& model, const std::vector<ElementFormat>& formats, const TrainConfig& cfg,
                           const Dataset& eval) {
    EvalCurve curve;
    for (const auto& f : formats)
        curve.push_back({format_name(f), f.bits(), eval_loss(model, QuantAttachment::direct(cfg.spec_for(f)), eval)});
    return curve;
}

inline std::vector<ElementFormat> int_eval_formats() {
    std::vector<ElementFormat> out;
    for (int b = 2; b <= 8; ++b) out.push_back(ElementFormat::integer(b));
    return out;
}

inline std::vector<ElementFormat> float_eval_formats() {
    return {ElementFormat::floating(2, 1), ElementFormat::floating(2, 2), ElementFormat::floating(3, 2),
            ElementFormat::floating(3, 3), ElementFormat::floating(4, 3)};
}

// Held-out loss used to pick the step size: the variant's own training
// format(s), or full precision.
inline double selection_loss(const Variant& v, const TrainConfig& cfg, const ToyModel& model, const Dataset& eval) {
    switch (v.kind) {
        case Variant::Kind::FullPrecision:
            return eval_loss(model, QuantAttachment::none(), eval);
        case Variant::Kind::SingleFormat:
            return eval_loss(model, QuantAttachment::direct(cfg.spec_for(*v.format)), eval);
        case Variant::Kind::MultiFormat:
        case Variant::Kind::MultiFormatAnchored: {
            double acc = 0.0;
            for (const auto& f : cfg.schedule) acc += eval_loss(model, QuantAttachment::direct(cfg.spec_for(f)), eval);
            return acc / static_cast<double>(cfg.schedule.size());
        }
    }
    return 0.0;
}

struct SweptRun {
    TrainResult result;
    double lr = 0.0;
    double selection = 0.0;
};

// Trains once per step size in cfg.lr_sweep and keeps the best held-out run.
inline SweptRun train_best(const Variant& variant, const TrainConfig& cfg, const ToyModel& start, const Dataset& data,
                           const Dataset& eval) {
    std::optional<SweptRun> best;
    for (double lr : cfg.lr_sweep) {
        TrainConfig c = cfg;
        c.optim.lr = lr;
        TrainResult r = train_run(variant, c, start, data);
        const double sel = selection_loss(variant, cfg, r.model, eval);
        if (!best || sel < best->selection) best = SweptRun{std::move(r), lr, sel};
    }
    if (!best) throw TrainingError("empty step-size sweep");
    return *best;
}

}  // namespace mx::qat
