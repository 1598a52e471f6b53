#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "delad/autodiff.hpp"
#include "delad/fft_conv.hpp"
#include "delad/image.hpp"
#include "delad/optimizer.hpp"
#include "delad/random.hpp"

namespace delad {

// ---------------------------------------------------------------------------
// Parameters of the unrolled model: a learnable initial estimate, one
// correction grid per Landweber step, one 3x3 conv per step, and a 3->1
// fusion conv over the concatenated intermediates.

inline constexpr int kUnrollSteps = 3;

struct ConvLayer {
    ad::Tensor weight;  // (cin, 3, 3)
    ad::Tensor bias;    // (1, 1, 1)
};

struct DeladParams {
    ad::Tensor x0;                              // (1, H, W)
    std::array<ad::Tensor, kUnrollSteps> m;     // correction grids
    std::array<ConvLayer, kUnrollSteps> conv;   // 1 -> 1 channel
    ConvLayer fusion;                           // 3 -> 1 channel

    int height() const { return x0.height; }
    int width() const { return x0.width; }

    // 4 HW grids + three (9 weights + bias) convs + (27 weights + bias) fusion
    std::size_t param_count() const {
        return 4 * x0.plane_size() + kUnrollSteps * (9 + 1) + (27 + 1);
    }

    std::vector<ad::Tensor*> all() {
        std::vector<ad::Tensor*> out{&x0};
        for (auto& t : m) out.push_back(&t);
        for (auto& c : conv) {
            out.push_back(&c.weight);
            out.push_back(&c.bias);
        }
        out.push_back(&fusion.weight);
        out.push_back(&fusion.bias);
        return out;
    }
};

/// x0 and the m grids are i.i.d. uniform [0,1); conv weights are uniform
/// [-sqrt(1/fan_in), +sqrt(1/fan_in)] with zero biases. Same seed, same bits.
inline DeladParams init_params(int height, int width, std::uint64_t seed) {
    if (height < 1 || width < 1) throw Error("init_params: zero-sized shape");
    Rng rng(seed);
    auto grid01 = [&] {
        ad::Tensor t(1, height, width);
        for (double& v : t.v) v = rng.uniform();
        return t;
    };
    auto conv_layer = [&](int cin) {
        ConvLayer layer;
        layer.weight = ad::Tensor(cin, 3, 3);
        const double bound = std::sqrt(1.0 / (cin * 9));
        for (double& v : layer.weight.v) v = rng.uniform(-bound, bound);
        layer.bias = ad::Tensor(1, 1, 1, 0.0);
        return layer;
    };
    DeladParams p;
    p.x0 = grid01();
    for (auto& t : p.m) t = grid01();
    for (auto& c : p.conv) c = conv_layer(1);
    p.fusion = conv_layer(kUnrollSteps);
    return p;
}

// ---------------------------------------------------------------------------
// Regularizers. hessian_reg is the plain L1 sum over pixels of
// |Xxx|+|Xyy|+2|Xxy| with replicate boundaries; sparsity_term is the mean of
// |1-x| so psi2 transfers across image sizes.

inline double hessian_reg(const Image& x) {
    const int h = x.height, w = x.width;
    auto clampd = [](int i, int n) { return std::clamp(i, 0, n - 1); };
    double total = 0.0;
    // first-order forward differences along x (zero on the last column)
    std::vector<double> dx(x.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            dx[static_cast<std::size_t>(y) * w + xx] =
                x.at(y, clampd(xx + 1, w)) - x.at(y, xx);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const double xxv =
                x.at(y, clampd(xx - 1, w)) - 2.0 * x.at(y, xx) + x.at(y, clampd(xx + 1, w));
            const double yyv =
                x.at(clampd(y - 1, h), xx) - 2.0 * x.at(y, xx) + x.at(clampd(y + 1, h), xx);
            const double xyv = dx[static_cast<std::size_t>(clampd(y + 1, h)) * w + xx] -
                               dx[static_cast<std::size_t>(y) * w + xx];
            total += std::abs(xxv) + std::abs(yyv) + 2.0 * std::abs(xyv);
        }
    return total;
}

inline double sparsity_term(const Image& x) {
    double total = 0.0;
    for (double v : x.data) total += std::abs(1.0 - v);
    return total / static_cast<double>(x.size());
}

namespace model_detail {

inline ad::NodePtr hessian_reg_node(const ad::NodePtr& x) {
    using namespace ad;
    auto xx = finite_diff(x, FdAxis::X, 2);
    auto yy = finite_diff(x, FdAxis::Y, 2);
    auto xy = finite_diff(finite_diff(x, FdAxis::X, 1), FdAxis::Y, 1);
    const double n = static_cast<double>(x->value.v.size());
    return scale(add(add(mean(abs_value(xx)), mean(abs_value(yy))),
                     scale(mean(abs_value(xy)), 2.0)),
                 n);
}

inline ad::NodePtr sparsity_node(const ad::NodePtr& x) {
    return ad::mean(ad::abs_value(ad::one_minus(x)));
}

}  // namespace model_detail

// ---------------------------------------------------------------------------
// Forward graph: three deep Landweber steps and the fusion layer.

struct ForwardGraph {
    ad::NodePtr output;                                    // x_hat (1,H,W)
    std::array<ad::NodePtr, kUnrollSteps> intermediates;   // x(1)..x(3)
    std::vector<ad::NodePtr> param_leaves;                 // same order as DeladParams::all()
};

// Leaf order: x0, m1..m3, then (weight, bias) per conv, then fusion weight
// and bias; the same order DeladParams::all() reports.
inline ForwardGraph build_forward_from_leaves(std::vector<ad::NodePtr> param_leaves,
                                              const Image& y, const Psf& h, double gamma) {
    using namespace ad;
    if (param_leaves.size() != 12) throw Error("forward: expected 12 parameter leaves");
    auto otf = OtfCache::global().get(h, y.height, y.width);

    ForwardGraph g;
    g.param_leaves = std::move(param_leaves);
    NodePtr x0 = g.param_leaves[0];
    if (x0->value.height != y.height || x0->value.width != y.width)
        throw Error("forward: parameter shape does not match the image");

    NodePtr y_leaf = leaf(ad::Tensor::from_image(y), false);
    NodePtr xk = x0;
    for (int k = 0; k < kUnrollSteps; ++k) {
        // W = x(k) + gamma Hᵀ(y - H x(k)) + m(k+1)
        NodePtr residual = sub(y_leaf, conv_fixed(xk, otf, false));
        NodePtr w =
            add(add(xk, scale(conv_fixed(residual, otf, true), gamma)), g.param_leaves[1 + k]);
        xk = sigmoid(conv3x3(relu(w), g.param_leaves[4 + 2 * k], g.param_leaves[5 + 2 * k]));
        g.intermediates[k] = xk;
    }
    g.output = sigmoid(conv3x3(
        concat({g.intermediates[0], g.intermediates[1], g.intermediates[2]}),
        g.param_leaves[10], g.param_leaves[11]));
    return g;
}

inline ForwardGraph build_forward(DeladParams& params, const Image& y, const Psf& h,
                                  double gamma, bool train_mode = true) {
    std::vector<ad::NodePtr> leaves;
    for (ad::Tensor* t : params.all()) leaves.push_back(ad::leaf(*t, train_mode));
    return build_forward_from_leaves(std::move(leaves), y, h, gamma);
}

struct ForwardResult {
    Image output;
    std::array<Image, kUnrollSteps> intermediates;
};

inline ForwardResult forward(DeladParams& params, const Image& y, const Psf& h,
                             double gamma = 0.8) {
    ForwardGraph g = build_forward(params, y, h, gamma, /*train_mode=*/false);
    ForwardResult r;
    r.output = g.output->value.to_image();
    for (int k = 0; k < kUnrollSteps; ++k)
        r.intermediates[k] = g.intermediates[k]->value.to_image();
    return r;
}

// ---------------------------------------------------------------------------
// Loss: -SSIM(H x_hat, y) + psi1 * hessian + optional psi2 * sparsity.

struct TrainConfig {
    int epochs = 2000;
    LrSchedule schedule;  // 0.05, {1000,1500}, 0.2
    double gamma = 0.8;
    double psi1 = 1e-6;          // Hessian weight
    double psi2 = 0.0;           // sparsity weight
    bool sparsity_enabled = false;
    std::uint64_t seed = 0;

    // preset for hazy single-exposure extended depth-of-field microscopy
    static TrainConfig edof() {
        TrainConfig cfg;
        cfg.epochs = 1000;
        cfg.schedule = LrSchedule{5e-3, {700}, 0.2};
        cfg.psi1 = 3e-6;
        cfg.psi2 = 0.2;
        cfg.sparsity_enabled = true;
        return cfg;
    }
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (cfg.gamma <= 0.0 || cfg.gamma >= 2.0) throw Error("TrainConfig: gamma must be in (0,2)");
    if (cfg.psi1 < 0.0 || cfg.psi2 < 0.0) throw Error("TrainConfig: weights must be >= 0");
    validate(cfg.schedule);
}

struct LossParts {
    ad::NodePtr total;
    double data_term = 0.0;   // -SSIM
    double hessian = 0.0;     // unweighted
    double sparsity = 0.0;    // unweighted
};

inline LossParts build_loss(const ad::NodePtr& x_hat, const Image& y,
                            std::shared_ptr<const Otf> otf, const TrainConfig& cfg) {
    using namespace ad;
    NodePtr y_leaf = leaf(ad::Tensor::from_image(y), false);
    NodePtr reblurred = conv_fixed(x_hat, otf, false);
    NodePtr data = scale(ssim_score(reblurred, y_leaf), -1.0);
    LossParts parts;
    parts.data_term = data->value.v[0];
    NodePtr total = data;
    NodePtr hess = model_detail::hessian_reg_node(x_hat);
    parts.hessian = hess->value.v[0];
    if (cfg.psi1 > 0.0) total = add(total, scale(hess, cfg.psi1));
    if (cfg.sparsity_enabled) {
        NodePtr sp = model_detail::sparsity_node(x_hat);
        parts.sparsity = sp->value.v[0];
        if (cfg.psi2 > 0.0) total = add(total, scale(sp, cfg.psi2));
    }
    parts.total = total;
    return parts;
}

// ---------------------------------------------------------------------------
// Self-supervised training loop.

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double data_term = 0.0;
    double hessian = 0.0;
    double sparsity = 0.0;
    double psnr_gt = 0.0;  // only meaningful when ground truth was supplied
    double ssim_gt = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

class DivergenceError : public Error {
public:
    DivergenceError(int epoch, Image last)
        : Error("train: loss diverged at epoch " + std::to_string(epoch)),
          epoch_(epoch), last_finite_(std::move(last)) {}
    int epoch() const { return epoch_; }
    const Image& last_finite() const { return last_finite_; }

private:
    int epoch_;
    Image last_finite_;
};

struct TrainResult {
    Image output;
    TrainHistory history;
    DeladParams params;
};

inline void write_epoch_record(std::ostream& out, const EpochRecord& r, bool with_metrics) {
    out << "{\"epoch\":" << r.epoch << ",\"lr\":" << r.lr << ",\"loss\":" << r.loss
        << ",\"data_term\":" << r.data_term << ",\"hessian\":" << r.hessian
        << ",\"sparsity\":" << r.sparsity;
    if (with_metrics) out << ",\"psnr\":" << r.psnr_gt << ",\"ssim\":" << r.ssim_gt;
    out << "}\n";
}

/// Trains on the degraded image alone. The optional ground truth is used
/// only for per-epoch metric logging and never influences the optimization.
inline TrainResult train(const Image& y, const Psf& h, const TrainConfig& cfg,
                         const Image* ground_truth = nullptr,
                         std::ostream* log = nullptr) {
    validate(cfg);
    require_finite(y, "train");
    auto otf = OtfCache::global().get(h, y.height, y.width);

    TrainResult result;
    result.params = init_params(y.height, y.width, cfg.seed);
    DeladParams& params = result.params;

    auto tensors = params.all();
    std::vector<RmspropState> states;
    states.reserve(tensors.size());
    for (auto* t : tensors) states.emplace_back(t->size());

    Image last_finite = y;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg.schedule, epoch);
        ForwardGraph g = build_forward(params, y, h, cfg.gamma, true);
        LossParts loss = build_loss(g.output, y, otf, cfg);
        if (!std::isfinite(loss.total->value.v[0]))
            throw DivergenceError(epoch, last_finite);
        last_finite = g.output->value.to_image();

        ad::backward(loss.total);
        for (std::size_t i = 0; i < tensors.size(); ++i)
            rmsprop_step(*tensors[i], g.param_leaves[i]->grad, states[i], lr);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.loss = loss.total->value.v[0];
        rec.data_term = loss.data_term;
        rec.hessian = loss.hessian;
        rec.sparsity = loss.sparsity;
        if (ground_truth) {
            rec.psnr_gt = psnr(last_finite, *ground_truth);
            rec.ssim_gt = ssim(last_finite, *ground_truth);
        }
        result.history.epochs.push_back(rec);
        if (log) write_epoch_record(*log, rec, ground_truth != nullptr);
    }

    // final-epoch output: one more forward pass with the updated parameters
    result.output = forward(params, y, h, cfg.gamma).output;
    return result;
}

/// Color protocol: deconvolve the luma plane only; chroma passes through.
inline ColorImage deconvolve_color(const ColorImage& img, const Psf& h,
                                   const TrainConfig& cfg, std::ostream* log = nullptr) {
    if (img.space != ColorSpace::RGB) throw Error("deconvolve_color: input must be RGB");
    ColorImage ycbcr = convert_color(img, ColorSpace::YCbCr);
    TrainResult r = train(ycbcr.plane[0], h, cfg, nullptr, log);
    ycbcr.plane[0] = clamp01(std::move(r.output));
    return convert_color(ycbcr, ColorSpace::RGB);
}

}  // namespace delad
