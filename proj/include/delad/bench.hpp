#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "delad/fft_conv.hpp"
#include "delad/image.hpp"
#include "delad/image_io.hpp"
#include "delad/model.hpp"
#include "delad/random.hpp"
#include "delad/solvers.hpp"

namespace delad {

// ---------------------------------------------------------------------------
// Blur synthesis: circular convolution plus seeded Gaussian noise, clamped.

inline Image synth_blur(const Image& gt, const Psf& h, double noise_sigma,
                        std::uint64_t seed) {
    if (noise_sigma < 0.0) throw Error("synth_blur: noise sigma must be >= 0");
    Image y = convolve(gt, h);
    if (noise_sigma > 0.0) {
        Rng rng(seed);
        for (double& v : y.data) v += noise_sigma * rng.normal();
    }
    return clamp01(std::move(y));
}

// ---------------------------------------------------------------------------
// Manifest and report formats.

struct BenchCase {
    std::string id;
    std::string ground_truth;  // optional path
    std::string blurred;       // optional path
    std::string kernel;        // required path
    double noise_sigma = 0.0;
};

struct DatasetManifest {
    std::vector<BenchCase> cases;
    std::filesystem::path base_dir;  // manifest location; relative paths resolve here
};

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_manifest: cannot open " + path);
    nlohmann::json j;
    in >> j;
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path();
    if (!j.contains("cases") || !j["cases"].is_array())
        throw Error("load_manifest: missing \"cases\" array");
    int index = 0;
    for (const auto& cj : j["cases"]) {
        BenchCase c;
        c.id = cj.value("id", "case" + std::to_string(index));
        c.ground_truth = cj.value("ground_truth", "");
        c.blurred = cj.value("blurred", "");
        c.kernel = cj.value("kernel", "");
        c.noise_sigma = cj.value("noise_sigma", 0.0);
        if (c.kernel.empty()) throw Error("load_manifest: case " + c.id + " lacks a kernel");
        if (c.ground_truth.empty() && c.blurred.empty())
            throw Error("load_manifest: case " + c.id +
                        " needs a ground truth or a blurred image");
        m.cases.push_back(std::move(c));
        ++index;
    }
    return m;
}

inline constexpr const char* kReportSchemaVersion = "1";

struct CaseResult {
    std::string id;
    std::string method;
    bool ok = false;
    std::string error;
    double psnr_db = 0.0;
    double ssim_val = 0.0;
    bool has_metrics = false;  // metrics require a ground truth
    double wall_time_s = 0.0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string restored_path;
};

struct BenchReport {
    std::string method;
    std::vector<CaseResult> cases;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int evaluated = 0;
    int failed = 0;
};

struct BenchConfig {
    SolverConfig solver;        // landweber / rl settings
    TrainConfig train;          // delad settings
    std::uint64_t seed = 0;     // base seed; per-case seed = base + case index
    int workers = 1;
};

inline std::string config_hash(const std::string& method, const BenchConfig& cfg) {
    std::string canon = method + "|" + std::to_string(cfg.solver.step_size) + "|" +
                        std::to_string(cfg.solver.iterations) + "|" +
                        std::to_string(cfg.solver.nonneg_projection) + "|" +
                        std::to_string(cfg.train.epochs) + "|" +
                        std::to_string(cfg.train.schedule.initial_lr) + "|" +
                        std::to_string(cfg.train.gamma) + "|" +
                        std::to_string(cfg.train.psi1) + "|" +
                        std::to_string(cfg.train.psi2) + "|" +
                        std::to_string(cfg.train.sparsity_enabled) + "|" +
                        std::to_string(cfg.seed);
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : canon) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

inline int default_worker_count() {
    if (const char* env = std::getenv("DELAD_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

namespace bench_detail {

inline std::string resolve(const DatasetManifest& m, const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || m.base_dir.empty()) return p;
    return (m.base_dir / fp).string();
}

inline CaseResult run_case(const DatasetManifest& manifest, const BenchCase& c,
                           const std::string& method, const BenchConfig& cfg,
                           std::uint64_t case_seed, const std::string& out_dir) {
    CaseResult r;
    r.id = c.id;
    r.method = method;
    r.seed = case_seed;
    r.config_hash = config_hash(method, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        Psf h = load_kernel(resolve(manifest, c.kernel));
        std::optional<Image> gt;
        if (!c.ground_truth.empty()) gt = load_gray(resolve(manifest, c.ground_truth));
        Image y = c.blurred.empty() ? synth_blur(*gt, h, c.noise_sigma, case_seed)
                                    : load_gray(resolve(manifest, c.blurred));

        Image restored;
        if (method == "landweber") {
            SolverConfig sc = cfg.solver;
            restored = landweber(y, h, sc);
        } else if (method == "rl") {
            restored = richardson_lucy(y, h, cfg.solver.iterations);
        } else if (method == "delad") {
            TrainConfig tc = cfg.train;
            tc.seed = case_seed;
            restored = train(y, h, tc).output;
        } else {
            throw Error("run_benchmark: unknown method " + method);
        }
        restored = clamp01(std::move(restored));

        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            r.restored_path = out_dir + "/" + c.id + "_" + method + ".png";
            save_image(restored, r.restored_path);
        }
        if (gt) {
            r.psnr_db = psnr(restored, *gt);
            r.ssim_val = ssim(restored, *gt);
            r.has_metrics = true;
        }
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    r.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace bench_detail

inline nlohmann::json case_to_json(const CaseResult& r, bool include_timing = true) {
    nlohmann::json j{{"schema_version", kReportSchemaVersion},
                     {"case", r.id},
                     {"method", r.method},
                     {"ok", r.ok},
                     {"config_hash", r.config_hash},
                     {"seed", r.seed}};
    if (!r.ok) j["error"] = r.error;
    if (r.has_metrics) {
        j["psnr"] = r.psnr_db;
        j["ssim"] = r.ssim_val;
    }
    if (!r.restored_path.empty()) j["restored"] = r.restored_path;
    if (include_timing) j["wall_time_s"] = r.wall_time_s;
    return j;
}

inline void check_case_record_schema(const nlohmann::json& j) {
    for (const char* key : {"schema_version", "case", "method", "ok", "config_hash", "seed"})
        if (!j.contains(key))
            throw Error(std::string("report record missing field: ") + key);
    if (j["schema_version"].get<std::string>() != kReportSchemaVersion)
        throw Error("report record has unknown schema version");
}

/// Runs one method over every manifest case. Cases lacking a blurred image
/// are synthesized from the ground truth with the toolkit's own circular
/// blur. Failures are recorded and skipped. Deterministic given the seed.
inline BenchReport run_benchmark(const DatasetManifest& manifest, const std::string& method,
                                 const BenchConfig& cfg, const std::string& out_dir) {
    BenchReport report;
    report.method = method;
    report.cases.resize(manifest.cases.size());

    const int workers =
        std::max(1, std::min<int>(cfg.workers, static_cast<int>(manifest.cases.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= manifest.cases.size()) break;
            report.cases[i] = bench_detail::run_case(manifest, manifest.cases[i], method, cfg,
                                                     cfg.seed + i, out_dir);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& r : report.cases) {
        if (!r.ok) {
            ++report.failed;
            continue;
        }
        if (r.has_metrics) {
            report.mean_psnr += r.psnr_db;
            report.mean_ssim += r.ssim_val;
            ++report.evaluated;
        }
    }
    if (report.evaluated > 0) {
        report.mean_psnr /= report.evaluated;
        report.mean_ssim /= report.evaluated;
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        {
            std::ofstream records(out_dir + "/" + method + "_cases.jsonl");
            for (const auto& r : report.cases) records << case_to_json(r).dump() << "\n";
        }
        {
            std::ofstream csv(out_dir + "/" + method + "_aggregate.csv");
            csv << "method,cases,evaluated,failed,mean_psnr,mean_ssim\n";
            csv << method << "," << report.cases.size() << "," << report.evaluated << ","
                << report.failed << "," << report.mean_psnr << "," << report.mean_ssim
                << "\n";
        }
        {
            nlohmann::json metrics{{"schema_version", kReportSchemaVersion},
                                   {"method", method},
                                   {"mean_psnr", report.mean_psnr},
                                   {"mean_ssim", report.mean_ssim},
                                   {"evaluated", report.evaluated},
                                   {"failed", report.failed}};
            std::ofstream mf(out_dir + "/" + method + "_metrics.json");
            mf << metrics.dump(2) << "\n";
        }
    }
    return report;
}

}  // namespace delad
