// Command-line front end: per-image self-supervised deconvolution, classic
// iterative baselines, benchmark orchestration, background removal, blur
// synthesis, and a gradient self-check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>

#include <CLI11.hpp>

#include "delad/background.hpp"
#include "delad/bench.hpp"
#include "delad/image_io.hpp"
#include "delad/model.hpp"
#include "delad/solvers.hpp"
#include "delad/wavelet.hpp"

namespace {

using namespace delad;

std::string default_log_path(const std::string& output) {
    std::filesystem::path p(output);
    p.replace_extension(".json");
    return p.string();
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg, bool& edof) {
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--lr", cfg.schedule.initial_lr, "initial learning rate");
    cmd->add_option("--lr-milestones", cfg.schedule.milestones,
                    "epochs at which the learning rate decays");
    cmd->add_option("--lr-decay", cfg.schedule.decay, "learning rate decay factor");
    cmd->add_option("--gamma", cfg.gamma, "Landweber step size");
    cmd->add_option("--psi1", cfg.psi1, "Hessian regularizer weight");
    cmd->add_option("--psi2", cfg.psi2, "sparsity regularizer weight")
        ->each([&cfg](const std::string&) { cfg.sparsity_enabled = true; });
    cmd->add_flag("--sparsity", cfg.sparsity_enabled, "enable the sparsity term");
    cmd->add_option("--seed", cfg.seed, "parameter initialization seed");
    cmd->add_flag("--edof", edof, "preset for hazy EDOF microscopy input");
}

int cmd_deconv(const std::string& input, const std::string& kernel,
               const std::string& output, const std::string& log_path,
               const std::string& gt_path, TrainConfig cfg, bool edof) {
    if (edof) {
        TrainConfig preset = TrainConfig::edof();
        preset.seed = cfg.seed;
        cfg = preset;
    }
    Psf h = load_kernel(kernel);
    std::ofstream log(log_path.empty() ? default_log_path(output) : log_path);
    if (!log) throw Error("deconv: cannot write training log");

    LoadedImage li = load_image(input);
    if (std::holds_alternative<ColorImage>(li)) {
        ColorImage restored = deconvolve_color(std::get<ColorImage>(li), h, cfg, &log);
        save_image(restored, output);
        std::printf("deconv: %s -> %s (color, %d epochs)\n", input.c_str(), output.c_str(),
                    cfg.epochs);
        return 0;
    }

    const Image& y = std::get<Image>(li);
    std::optional<Image> gt;
    if (!gt_path.empty()) gt = load_gray(gt_path);
    TrainResult r = train(y, h, cfg, gt ? &*gt : nullptr, &log);
    save_image(clamp01(std::move(r.output)), output);
    const EpochRecord& last = r.history.epochs.back();
    std::printf("deconv: %s -> %s (%d epochs, final loss %.6f)\n", input.c_str(),
                output.c_str(), cfg.epochs, last.loss);
    if (gt)
        std::printf("deconv: vs ground truth: %.2f dB PSNR, %.4f SSIM\n", last.psnr_gt,
                    last.ssim_gt);
    return 0;
}

int cmd_classic(const std::string& method, const std::string& input,
                const std::string& kernel, const std::string& output,
                const SolverConfig& cfg) {
    Image y = load_gray(input);
    Psf h = load_kernel(kernel);
    Image x = method == "rl" ? richardson_lucy(y, h, cfg.iterations) : landweber(y, h, cfg);
    save_image(clamp01(std::move(x)), output);
    std::printf("%s: %s -> %s (%d iterations)\n", method.c_str(), input.c_str(),
                output.c_str(), cfg.iterations);
    return 0;
}

int cmd_bench(const std::string& manifest_path, const std::string& method,
              const std::string& out_dir, const BenchConfig& cfg) {
    DatasetManifest manifest = load_manifest(manifest_path);
    BenchReport rep = run_benchmark(manifest, method, cfg, out_dir);
    std::printf("bench %s: %zu cases, %d evaluated, %d failed\n", method.c_str(),
                rep.cases.size(), rep.evaluated, rep.failed);
    if (rep.evaluated > 0)
        std::printf("bench %s: mean PSNR %.2f dB, mean SSIM %.4f\n", method.c_str(),
                    rep.mean_psnr, rep.mean_ssim);
    for (const auto& c : rep.cases)
        if (!c.ok) std::fprintf(stderr, "bench: case %s failed: %s\n", c.id.c_str(),
                                c.error.c_str());
    return rep.failed > 0 ? 1 : 0;
}

int cmd_bg_remove(const std::string& input, const std::string& output,
                  const std::string& bg_output, int iterations) {
    Image y = load_gray(input);
    Image bg = estimate_background(y, iterations);
    Image out(y.height, y.width);
    for (std::size_t i = 0; i < y.size(); ++i)
        out.data[i] = std::clamp(y.data[i] - bg.data[i], 0.0, 1.0);
    save_image(out, output);
    if (!bg_output.empty()) save_image(bg, bg_output);
    std::printf("bg-remove: %s -> %s\n", input.c_str(), output.c_str());
    return 0;
}

int cmd_synth(const std::string& gt_path, const std::string& kernel,
              const std::string& output, double noise, std::uint64_t seed) {
    Image gt = load_gray(gt_path);
    Psf h = load_kernel(kernel);
    Image y = synth_blur(gt, h, noise, seed);
    save_image(y, output);
    std::printf("synth: %s * %s + noise(%.4f) -> %s\n", gt_path.c_str(), kernel.c_str(),
                noise, output.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    using namespace delad::ad;
    Rng rng(seed);
    auto rand_tensor = [&](int c, int h, int w, double lo = -1.0, double hi = 1.0) {
        Tensor t(c, h, w);
        for (double& v : t.v) v = rng.uniform(lo, hi);
        return t;
    };
    const Psf h = [&] {
        std::vector<double> v(9);
        for (double& x : v) x = rng.uniform(0.1, 1.0);
        return make_psf(3, 3, std::move(v));
    }();
    auto otf = OtfCache::global().get(h, 8, 8);

    struct Check {
        const char* name;
        double tolerance;
        std::vector<Tensor> leaves;
        GraphBuilder builder;
        bool exclude_zero = false;
    };
    std::vector<Check> checks;
    auto x8 = rand_tensor(1, 8, 8);
    auto y8 = rand_tensor(1, 8, 8);
    checks.push_back({"add", 1e-10, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          return mean(add(l[0], l[1]));
                      }});
    checks.push_back({"sub", 1e-10, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          return mean(sub(l[0], l[1]));
                      }});
    checks.push_back({"scale", 1e-10, {x8}, [](const std::vector<NodePtr>& l) {
                          return mean(scale(l[0], -1.7));
                      }});
    checks.push_back({"mul", 1e-8, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          return mean(mul(l[0], l[1]));
                      }});
    checks.push_back({"relu", 1e-4, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          return mean(mul(relu(l[0]), l[1]));
                      }, true});
    checks.push_back({"sigmoid", 1e-4, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          return mean(mul(sigmoid(l[0]), l[1]));
                      }});
    checks.push_back({"abs", 1e-4, {x8}, [](const std::vector<NodePtr>& l) {
                          return mean(abs_value(l[0]));
                      }, true});
    checks.push_back({"one_minus", 1e-10, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          return mean(mul(one_minus(l[0]), l[1]));
                      }});
    checks.push_back({"mean", 1e-10, {x8}, [](const std::vector<NodePtr>& l) {
                          return mean(l[0]);
                      }});
    checks.push_back({"concat", 1e-8, {x8, y8}, [](const std::vector<NodePtr>& l) {
                          auto c = concat({l[0], l[1]});
                          return mean(mul(c, c));
                      }});
    checks.push_back({"conv_fixed", 1e-8, {x8, y8}, [otf](const std::vector<NodePtr>& l) {
                          return mean(mul(conv_fixed(l[0], otf, false), l[1]));
                      }});
    auto w1 = rand_tensor(1, 3, 3);
    auto bias = rand_tensor(1, 1, 1);
    checks.push_back({"conv3x3", 1e-8, {x8, w1, bias}, [](const std::vector<NodePtr>& l) {
                          auto c = conv3x3(l[0], l[1], l[2]);
                          return mean(mul(c, c));
                      }});
    checks.push_back({"finite_diff", 1e-8, {x8}, [](const std::vector<NodePtr>& l) {
                          auto d = finite_diff(l[0], FdAxis::X, 2);
                          return mean(mul(d, d));
                      }});
    auto a01 = rand_tensor(1, 8, 8, 0.05, 0.95);
    auto b01 = rand_tensor(1, 8, 8, 0.05, 0.95);
    checks.push_back({"ssim", 1e-4, {a01, b01}, [](const std::vector<NodePtr>& l) {
                          return ssim_score(l[0], l[1]);
                      }});

    {
        Image y(8, 8);
        for (double& v : y.data) v = rng.uniform(0.05, 0.95);
        DeladParams params = init_params(8, 8, seed + 1);
        std::vector<Tensor> leaves;
        for (auto* t : params.all()) leaves.push_back(*t);
        TrainConfig cfg;
        cfg.psi1 = 1e-3;
        cfg.psi2 = 0.1;
        cfg.sparsity_enabled = true;
        Psf hh = h;
        checks.push_back({"full_loss", 1e-4, std::move(leaves),
                          [y, hh, otf, cfg](const std::vector<NodePtr>& l) {
                              ForwardGraph g = build_forward_from_leaves(l, y, hh, 0.8);
                              return build_loss(g.output, y, otf, cfg).total;
                          }});
    }

    bool all_ok = true;
    for (auto& c : checks) {
        GradCheckOptions opt;
        opt.seed = seed;
        opt.exclude_zero_coords = c.exclude_zero;
        auto errs = grad_check(c.builder, c.leaves, opt);
        double worst = 0.0;
        for (double e : errs) worst = std::max(worst, e);
        const bool ok = worst <= c.tolerance;
        all_ok = all_ok && ok;
        std::printf("%-12s max rel err %.3e (tol %.0e) %s\n", c.name, worst, c.tolerance,
                    ok ? "ok" : "FAIL");
    }
    return all_ok ? 0 : 1;
}

int cmd_info() {
    std::printf("delad: self-supervised non-blind image deconvolution toolkit\n");
    std::printf("report schema version: %s\n", kReportSchemaVersion);
    std::printf("default workers: %d (override with DELAD_WORKERS)\n",
                default_worker_count());
    std::printf("image formats: png, pgm, ppm (8/16-bit); kernels: image or text grid\n");
    std::printf("unroll steps: %d; background wavelet levels: %d\n", kUnrollSteps,
                kBackgroundLevels);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised non-blind image deconvolution toolkit"};
    app.require_subcommand(1);
    // config keys live under a [subcommand] section; flags override the file
    app.set_config("--config", "", "key=value configuration file; flags override it");

    // deconv
    std::string in_path, kernel_path, out_path, log_path, gt_path;
    TrainConfig train_cfg;
    bool edof = false;
    auto* deconv = app.add_subcommand("deconv", "self-supervised deconvolution of one image");
    deconv->fallthrough();
    deconv->add_option("--input", in_path, "degraded image")->required();
    deconv->add_option("--kernel", kernel_path, "blur kernel (image or text grid)")->required();
    deconv->add_option("--output", out_path, "restored image path")->required();
    deconv->add_option("--log", log_path, "JSON-lines training log (default: output.json)");
    deconv->add_option("--ground-truth", gt_path,
                       "reference image for metric logging only; never used in training");
    add_train_flags(deconv, train_cfg, edof);

    // landweber / rl
    SolverConfig solver_cfg;
    auto* lw = app.add_subcommand("landweber", "Landweber iterative deconvolution");
    lw->fallthrough();
    lw->add_option("--input", in_path, "degraded image")->required();
    lw->add_option("--kernel", kernel_path, "blur kernel")->required();
    lw->add_option("--output", out_path, "restored image path")->required();
    lw->add_option("--iterations", solver_cfg.iterations, "iteration count");
    lw->add_option("--step", solver_cfg.step_size, "step size");
    lw->add_flag("--nonneg", solver_cfg.nonneg_projection, "project onto x >= 0");

    auto* rl = app.add_subcommand("rl", "Richardson-Lucy deconvolution");
    rl->fallthrough();
    rl->add_option("--input", in_path, "degraded image")->required();
    rl->add_option("--kernel", kernel_path, "blur kernel")->required();
    rl->add_option("--output", out_path, "restored image path")->required();
    rl->add_option("--iterations", solver_cfg.iterations, "iteration count");

    // bench
    std::string manifest_path, method = "delad", bench_out = "bench_out";
    BenchConfig bench_cfg;
    bench_cfg.workers = default_worker_count();
    auto* bench = app.add_subcommand("bench", "run one method over a dataset manifest");
    bench->fallthrough();
    bench->add_option("--manifest", manifest_path, "dataset manifest JSON")->required();
    bench->add_option("--method", method, "landweber, rl, or delad")
        ->check(CLI::IsMember({"landweber", "rl", "delad"}));
    bench->add_option("--out-dir", bench_out, "report and restored-image directory");
    bench->add_option("--seed", bench_cfg.seed, "base seed; per-case seed = base + index");
    bench->add_option("--workers", bench_cfg.workers, "parallel case workers");
    bench->add_option("--iterations", bench_cfg.solver.iterations,
                      "iterations for landweber/rl");
    bench->add_option("--epochs", bench_cfg.train.epochs, "epochs for delad");
    bench->add_option("--psi1", bench_cfg.train.psi1, "Hessian weight for delad");

    // bg-remove
    std::string bg_out_path;
    int bg_iterations = kBackgroundIterations;
    auto* bg = app.add_subcommand("bg-remove", "wavelet background estimation and removal");
    bg->fallthrough();
    bg->add_option("--input", in_path, "input image")->required();
    bg->add_option("--output", out_path, "background-subtracted image")->required();
    bg->add_option("--background", bg_out_path, "also write the estimated background");
    bg->add_option("--iterations", bg_iterations, "estimation iterations");

    // synth
    double noise_sigma = 0.01;
    std::uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "synthesize a blurred, noisy measurement");
    synth->fallthrough();
    synth->add_option("--ground-truth", gt_path, "sharp source image")->required();
    synth->add_option("--kernel", kernel_path, "blur kernel")->required();
    synth->add_option("--output", out_path, "blurred output path")->required();
    synth->add_option("--noise", noise_sigma, "Gaussian noise sigma in [0,1] units");
    synth->add_option("--seed", synth_seed, "noise seed");

    // gradcheck
    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference check of every gradient primitive");
    gc->add_option("--seed", gc_seed, "sampling seed");

    auto* info = app.add_subcommand("info", "print build and format information");

    CLI11_PARSE(app, argc, argv);

    try {
        if (deconv->parsed())
            return cmd_deconv(in_path, kernel_path, out_path, log_path, gt_path, train_cfg,
                              edof);
        if (lw->parsed()) return cmd_classic("landweber", in_path, kernel_path, out_path,
                                             solver_cfg);
        if (rl->parsed()) return cmd_classic("rl", in_path, kernel_path, out_path, solver_cfg);
        if (bench->parsed()) return cmd_bench(manifest_path, method, bench_out, bench_cfg);
        if (bg->parsed()) return cmd_bg_remove(in_path, out_path, bg_out_path, bg_iterations);
        if (synth->parsed())
            return cmd_synth(gt_path, kernel_path, out_path, noise_sigma, synth_seed);
        if (gc->parsed()) return cmd_gradcheck(gc_seed);
        if (info->parsed()) return cmd_info();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
