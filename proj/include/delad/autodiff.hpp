#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "delad/fft_conv.hpp"
#include "delad/image.hpp"
#include "delad/random.hpp"

namespace delad::ad {

/// Multi-channel 2D value grid, channel-major.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          v(static_cast<std::size_t>(c) * h * w, fill) {}

    static Tensor from_image(const Image& img) {
        Tensor t(1, img.height, img.width);
        t.v = img.data;
        return t;
    }

    Image to_image(int channel = 0) const {
        Image img(height, width);
        const std::size_t plane = static_cast<std::size_t>(height) * width;
        std::copy_n(v.begin() + channel * plane, plane, img.data.begin());
        return img;
    }

    std::size_t size() const { return v.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    double& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    std::string shape_str() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" +
               std::to_string(width);
    }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the (acyclic) computation graph. Values are computed
/// eagerly at construction; gradient accumulators start at zero and sum
/// over all uses, so running backward twice without reset_grad doubles them.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs
    const char* op = "leaf";
    int id = 0;
};

namespace detail {

inline int next_node_id() {
    thread_local int counter = 0;
    return ++counter;
}

inline NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> inputs,
                         std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->id = next_node_id();
    n->inputs = std::move(inputs);
    n->backprop = std::move(backprop);
    n->requires_grad = false;
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    for (double v : value.v)
        if (!std::isfinite(v))
            throw Error(std::string("autodiff: non-finite value in node ") +
                        std::to_string(n->id) + " (" + op + ")");
    n->value = std::move(value);
    if (n->requires_grad)
        n->grad = Tensor(n->value.channels, n->value.height, n->value.width);
    return n;
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw Error(std::string("autodiff: shape mismatch in ") + op + ": " + a.shape_str() +
                    " vs " + b.shape_str());
}

}  // namespace detail

inline NodePtr leaf(Tensor value, bool requires_grad = false) {
    auto n = detail::make_node("leaf", std::move(value), {}, nullptr);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad = Tensor(n->value.channels, n->value.height, n->value.width);
    return n;
}

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    detail::require_same(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += b->value.v[i];
    return detail::make_node("add", std::move(out), {a, b}, [](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (n.inputs[0]->requires_grad) n.inputs[0]->grad.v[i] += n.grad.v[i];
            if (n.inputs[1]->requires_grad) n.inputs[1]->grad.v[i] += n.grad.v[i];
        }
    });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    detail::require_same(a->value, b->value, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= b->value.v[i];
    return detail::make_node("sub", std::move(out), {a, b}, [](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (n.inputs[0]->requires_grad) n.inputs[0]->grad.v[i] += n.grad.v[i];
            if (n.inputs[1]->requires_grad) n.inputs[1]->grad.v[i] -= n.grad.v[i];
        }
    });
}

inline NodePtr scale(const NodePtr& a, double c) {
    Tensor out = a->value;
    for (double& v : out.v) v *= c;
    return detail::make_node("scale", std::move(out), {a}, [c](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            n.inputs[0]->grad.v[i] += c * n.grad.v[i];
    });
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    detail::require_same(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= b->value.v[i];
    return detail::make_node("mul", std::move(out), {a, b}, [](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (n.inputs[0]->requires_grad)
                n.inputs[0]->grad.v[i] += n.grad.v[i] * n.inputs[1]->value.v[i];
            if (n.inputs[1]->requires_grad)
                n.inputs[1]->grad.v[i] += n.grad.v[i] * n.inputs[0]->value.v[i];
        }
    });
}

inline NodePtr relu(const NodePtr& a) {
    Tensor out = a->value;
    for (double& v : out.v) v = std::max(v, 0.0);
    // subgradient at exactly 0 is 0
    return detail::make_node("relu", std::move(out), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (n.inputs[0]->value.v[i] > 0.0) n.inputs[0]->grad.v[i] += n.grad.v[i];
    });
}

inline NodePtr sigmoid(const NodePtr& a) {
    Tensor out = a->value;
    for (double& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
    return detail::make_node("sigmoid", std::move(out), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double s = n.value.v[i];
            n.inputs[0]->grad.v[i] += n.grad.v[i] * s * (1.0 - s);
        }
    });
}

inline NodePtr abs_value(const NodePtr& a) {
    Tensor out = a->value;
    for (double& v : out.v) v = std::abs(v);
    // subgradient at exactly 0 is 0
    return detail::make_node("abs", std::move(out), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = n.inputs[0]->value.v[i];
            if (x > 0.0)
                n.inputs[0]->grad.v[i] += n.grad.v[i];
            else if (x < 0.0)
                n.inputs[0]->grad.v[i] -= n.grad.v[i];
        }
    });
}

inline NodePtr one_minus(const NodePtr& a) {
    Tensor out = a->value;
    for (double& v : out.v) v = 1.0 - v;
    return detail::make_node("one_minus", std::move(out), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            n.inputs[0]->grad.v[i] -= n.grad.v[i];
    });
}

/// Mean over every element, producing a 1x1x1 scalar node.
inline NodePtr mean(const NodePtr& a) {
    double total = 0.0;
    for (double v : a->value.v) total += v;
    const double inv_n = 1.0 / static_cast<double>(a->value.size());
    Tensor out(1, 1, 1, total * inv_n);
    return detail::make_node("mean", std::move(out), {a}, [inv_n](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const double g = n.grad.v[0] * inv_n;
        for (double& gv : n.inputs[0]->grad.v) gv += g;
    });
}

inline NodePtr concat(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw Error("autodiff: concat of nothing");
    int channels = 0;
    for (const auto& p : parts) {
        if (p->value.height != parts[0]->value.height ||
            p->value.width != parts[0]->value.width)
            throw Error("autodiff: concat spatial shape mismatch");
        channels += p->value.channels;
    }
    Tensor out(channels, parts[0]->value.height, parts[0]->value.width);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.v.begin(), p->value.v.end(), out.v.begin() + off);
        off += p->value.size();
    }
    return detail::make_node("concat", std::move(out), parts, [](Node& n) {
        std::size_t off = 0;
        for (auto& in : n.inputs) {
            if (in->requires_grad)
                for (std::size_t i = 0; i < in->grad.size(); ++i)
                    in->grad.v[i] += n.grad.v[off + i];
            off += in->value.size();
        }
    });
}

/// Circular convolution (or correlation, for the adjoint operator) with a
/// fixed kernel given as a cached OTF, applied per channel.
inline NodePtr conv_fixed(const NodePtr& a, std::shared_ptr<const Otf> otf,
                          bool adjoint = false) {
    const Tensor& x = a->value;
    if (x.height != otf->height || x.width != otf->width)
        throw Error("autodiff: conv_fixed shape does not match OTF");
    Tensor out(x.channels, x.height, x.width);
    for (int c = 0; c < x.channels; ++c) {
        Image plane = x.to_image(c);
        Image y = convolve(plane, *otf, adjoint);
        std::copy(y.data.begin(), y.data.end(), out.v.begin() + c * x.plane_size());
    }
    return detail::make_node(adjoint ? "corr_fixed" : "conv_fixed", std::move(out), {a},
                             [otf, adjoint](Node& n) {
                                 if (!n.inputs[0]->requires_grad) return;
                                 const Tensor& g = n.grad;
                                 for (int c = 0; c < g.channels; ++c) {
                                     Image plane = g.to_image(c);
                                     Image back = convolve(plane, *otf, !adjoint);
                                     double* dst =
                                         n.inputs[0]->grad.v.data() + c * g.plane_size();
                                     for (std::size_t i = 0; i < back.data.size(); ++i)
                                         dst[i] += back.data[i];
                                 }
                             });
}

/// Learnable 3x3 convolution, cin channels in, one channel out, zero-padded
/// "same" output. Weight tensor is (cin,3,3); bias is a 1x1x1 node.
inline NodePtr conv3x3(const NodePtr& input, const NodePtr& weight, const NodePtr& bias) {
    const Tensor& x = input->value;
    const Tensor& w = weight->value;
    if (w.height != 3 || w.width != 3 || w.channels != x.channels)
        throw Error("autodiff: conv3x3 expects a (cin,3,3) weight matching the input");
    if (bias->value.size() != 1) throw Error("autodiff: conv3x3 bias must be scalar");

    Tensor out(1, x.height, x.width, bias->value.v[0]);
    for (int c = 0; c < x.channels; ++c)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const double wv = w.at(c, dy + 1, dx + 1);
                if (wv == 0.0) continue;
                for (int y = 0; y < x.height; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= x.height) continue;
                    for (int xx = 0; xx < x.width; ++xx) {
                        const int sx = xx + dx;
                        if (sx < 0 || sx >= x.width) continue;
                        out.at(0, y, xx) += wv * x.at(c, sy, sx);
                    }
                }
            }

    return detail::make_node("conv3x3", std::move(out), {input, weight, bias}, [](Node& n) {
        const Tensor& x = n.inputs[0]->value;
        const Tensor& w = n.inputs[1]->value;
        const Tensor& g = n.grad;
        if (n.inputs[2]->requires_grad) {
            double s = 0.0;
            for (double v : g.v) s += v;
            n.inputs[2]->grad.v[0] += s;
        }
        for (int c = 0; c < x.channels; ++c)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const double wv = w.at(c, dy + 1, dx + 1);
                    double wgrad = 0.0;
                    for (int y = 0; y < x.height; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= x.height) continue;
                        for (int xx = 0; xx < x.width; ++xx) {
                            const int sx = xx + dx;
                            if (sx < 0 || sx >= x.width) continue;
                            const double gv = g.at(0, y, xx);
                            wgrad += gv * x.at(c, sy, sx);
                            if (n.inputs[0]->requires_grad)
                                n.inputs[0]->grad.at(c, sy, sx) += gv * wv;
                        }
                    }
                    if (n.inputs[1]->requires_grad)
                        n.inputs[1]->grad.at(c, dy + 1, dx + 1) += wgrad;
                }
    });
}

enum class FdAxis { X, Y };

/// Finite difference along one axis with replicate boundary. Order 1 is the
/// forward difference (zero on the trailing edge), order 2 the [1,-2,1]
/// second-difference stencil with clamped neighbor indices.
inline NodePtr finite_diff(const NodePtr& a, FdAxis axis, int order) {
    if (order != 1 && order != 2) throw Error("autodiff: finite_diff order must be 1 or 2");
    const Tensor& x = a->value;
    Tensor out(x.channels, x.height, x.width);
    const bool horiz = axis == FdAxis::X;
    const int n = horiz ? x.width : x.height;
    auto idx = [&](int c, int y, int xx, int i) {
        return horiz ? x.at(c, y, std::clamp(i, 0, n - 1))
                     : x.at(c, std::clamp(i, 0, n - 1), xx);
    };
    for (int c = 0; c < x.channels; ++c)
        for (int y = 0; y < x.height; ++y)
            for (int xx = 0; xx < x.width; ++xx) {
                const int i = horiz ? xx : y;
                if (order == 1)
                    out.at(c, y, xx) = idx(c, y, xx, i + 1) - idx(c, y, xx, i);
                else
                    out.at(c, y, xx) =
                        idx(c, y, xx, i - 1) - 2.0 * idx(c, y, xx, i) + idx(c, y, xx, i + 1);
            }
    return detail::make_node("finite_diff", std::move(out), {a}, [axis, order](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& gin = n.inputs[0]->grad;
        const Tensor& g = n.grad;
        const bool horiz = axis == FdAxis::X;
        const int len = horiz ? g.width : g.height;
        auto scatter = [&](int c, int y, int xx, int i, double v) {
            const int ci = std::clamp(i, 0, len - 1);
            if (horiz)
                gin.at(c, y, ci) += v;
            else
                gin.at(c, ci, xx) += v;
        };
        for (int c = 0; c < g.channels; ++c)
            for (int y = 0; y < g.height; ++y)
                for (int xx = 0; xx < g.width; ++xx) {
                    const int i = horiz ? xx : y;
                    const double gv = g.at(c, y, xx);
                    if (order == 1) {
                        scatter(c, y, xx, i + 1, gv);
                        scatter(c, y, xx, i, -gv);
                    } else {
                        scatter(c, y, xx, i - 1, gv);
                        scatter(c, y, xx, i, -2.0 * gv);
                        scatter(c, y, xx, i + 1, gv);
                    }
                }
    });
}

/// Fused mean-SSIM score over two single-channel tensors, sharing its
/// forward formula with delad::ssim. Backward propagates through the
/// windowed statistics analytically; the window filter is self-adjoint.
inline NodePtr ssim_score(const NodePtr& a, const NodePtr& b) {
    detail::require_same(a->value, b->value, "ssim_score");
    if (a->value.channels != 1) throw Error("autodiff: ssim_score expects single-channel input");
    const int h = a->value.height, w = a->value.width;
    auto maps = std::make_shared<ssim_detail::StatMaps>(
        ssim_detail::stat_maps(a->value.v, b->value.v, h, w));
    Tensor out(1, 1, 1, maps->mean);
    return detail::make_node("ssim_score", std::move(out), {a, b}, [maps, h, w](Node& n) {
        using namespace ssim_detail;
        const std::vector<double>& av = n.inputs[0]->value.v;
        const std::vector<double>& bv = n.inputs[1]->value.v;
        const std::size_t npix = av.size();
        const double upstream = n.grad.v[0] / static_cast<double>(npix);

        std::vector<double> g_mua(npix), g_mub(npix), g_fa2(npix), g_fb2(npix), g_fab(npix);
        for (std::size_t i = 0; i < npix; ++i) {
            const double mua = maps->mu_a[i], mub = maps->mu_b[i];
            const double sa2 = maps->fa2[i] - mua * mua;
            const double sb2 = maps->fb2[i] - mub * mub;
            const double sab = maps->fab[i] - mua * mub;
            const double n1 = 2.0 * mua * mub + kC1;
            const double n2 = 2.0 * sab + kC2;
            const double d1 = mua * mua + mub * mub + kC1;
            const double d2 = sa2 + sb2 + kC2;
            const double s = maps->score[i];
            const double inv_dd = 1.0 / (d1 * d2);
            const double gn1 = upstream * n2 * inv_dd;
            const double gn2 = upstream * n1 * inv_dd;
            const double gd1 = -upstream * s / d1;
            const double gd2 = -upstream * s / d2;
            const double gsab = 2.0 * gn2;
            const double gsa2 = gd2;
            const double gsb2 = gd2;
            g_mua[i] = 2.0 * mub * gn1 + 2.0 * mua * gd1 - 2.0 * mua * gsa2 - mub * gsab;
            g_mub[i] = 2.0 * mua * gn1 + 2.0 * mub * gd1 - 2.0 * mub * gsb2 - mua * gsab;
            g_fa2[i] = gsa2;
            g_fb2[i] = gsb2;
            g_fab[i] = gsab;
        }
        const auto f_mua = filter(g_mua, h, w);
        const auto f_mub = filter(g_mub, h, w);
        const auto f_fa2 = filter(g_fa2, h, w);
        const auto f_fb2 = filter(g_fb2, h, w);
        const auto f_fab = filter(g_fab, h, w);
        if (n.inputs[0]->requires_grad)
            for (std::size_t i = 0; i < npix; ++i)
                n.inputs[0]->grad.v[i] +=
                    f_mua[i] + 2.0 * av[i] * f_fa2[i] + bv[i] * f_fab[i];
        if (n.inputs[1]->requires_grad)
            for (std::size_t i = 0; i < npix; ++i)
                n.inputs[1]->grad.v[i] +=
                    f_mub[i] + 2.0 * bv[i] * f_fb2[i] + av[i] * f_fab[i];
    });
}

// ---------------------------------------------------------------------------
// Evaluation and reverse-mode sweep.

inline const Tensor& eval(const NodePtr& root) { return root->value; }

namespace detail {

inline void topo_order(const NodePtr& root, std::vector<Node*>& order) {
    // inputs are fixed at creation, so ids increase along every edge and
    // sorting the reachable set by id is a topological order
    std::unordered_set<Node*> visited;
    std::vector<Node*> stack{root.get()};
    visited.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& in : n->inputs)
            if (visited.insert(in.get()).second) stack.push_back(in.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id < b->id; });
}

}  // namespace detail

/// Accumulates gradients of a scalar root into every requires_grad node.
inline void backward(const NodePtr& root) {
    if (root->value.size() != 1) throw Error("autodiff: backward root must be scalar");
    if (!root->requires_grad) return;
    std::vector<Node*> order;
    detail::topo_order(root, order);
    // interior grads are per-sweep scratch; only leaves accumulate across calls
    for (Node* n : order)
        if (n->requires_grad && n->backprop)
            std::fill(n->grad.v.begin(), n->grad.v.end(), 0.0);
    root->grad.v[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

inline void reset_grad(const NodePtr& node) {
    if (node->requires_grad) std::fill(node->grad.v.begin(), node->grad.v.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

using GraphBuilder = std::function<NodePtr(const std::vector<NodePtr>&)>;

struct GradCheckOptions {
    double step = 1e-4;
    int samples_per_leaf = 32;
    std::uint64_t seed = 0;
    // skip coordinates whose value is exactly 0 (relu/abs subgradient points)
    bool exclude_zero_coords = false;
};

/// Compares backward gradients against central differences on a random
/// subsample of coordinates per leaf. Returns the max relative error per
/// leaf; relative error uses a max(|a|,|b|,1e-8) denominator.
inline std::vector<double> grad_check(const GraphBuilder& builder,
                                      const std::vector<Tensor>& leaf_values,
                                      const GradCheckOptions& opt = {}) {
    auto build = [&](const std::vector<Tensor>& values) {
        std::vector<NodePtr> leaves;
        leaves.reserve(values.size());
        for (const auto& t : values) leaves.push_back(leaf(t, true));
        NodePtr root = builder(leaves);
        if (root->value.size() != 1) throw Error("grad_check: builder must produce a scalar");
        return std::pair{root, leaves};
    };

    auto [root, leaves] = build(leaf_values);
    {
        auto [root2, leaves2] = build(leaf_values);
        if (root->value.v[0] != root2->value.v[0])
            throw Error("grad_check: builder is not deterministic");
    }
    backward(root);

    std::vector<double> max_err(leaf_values.size(), 0.0);
    Rng rng(opt.seed);
    for (std::size_t li = 0; li < leaf_values.size(); ++li) {
        const std::size_t n = leaf_values[li].size();
        const int samples = std::min<std::size_t>(n, std::max(opt.samples_per_leaf, 32));
        for (int s = 0; s < samples; ++s) {
            const std::size_t ci =
                samples == static_cast<int>(n) ? s : rng.next_u64() % n;
            if (opt.exclude_zero_coords && leaf_values[li].v[ci] == 0.0) continue;
            std::vector<Tensor> plus = leaf_values;
            std::vector<Tensor> minus = leaf_values;
            plus[li].v[ci] += opt.step;
            minus[li].v[ci] -= opt.step;
            const double fp = build(plus).first->value.v[0];
            const double fm = build(minus).first->value.v[0];
            const double fd = (fp - fm) / (2.0 * opt.step);
            const double an = leaves[li]->grad.v[ci];
            const double err =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            max_err[li] = std::max(max_err[li], err);
        }
    }
    return max_err;
}

}  // namespace delad::ad
