// twsolve: command-line front end for the denoiser-prior inverse solver.
//
// Subcommands: degrade, solve, train, pretrain, eval. One JSON config file
// drives everything; subcommand flags override individual fields. Exit codes:
//   0 success
//   2 configuration error (schema, incompatible dimensions, bad flags)
//   3 I/O error (unreadable inputs, unwritable outputs)
//   4 solver divergence
//   5 training divergence
//   6 evaluation produced no successful rows

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tws/config.hpp"
#include "tws/data.hpp"
#include "tws/eval.hpp"
#include "tws/solver.hpp"
#include "tws/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tws;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitSolveDiverged = 4;
constexpr int kExitTrainDiverged = 5;
constexpr int kExitEvalAllFailed = 6;

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string crc_hex(const std::string& path) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", file_crc32(path));
    return buf;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

Tensor<float> center_crop(const Tensor<float>& img, int crop) {
    if (crop <= 0 || (img.height == crop && img.width == crop)) return img;
    if (img.height < crop || img.width < crop)
        throw IoError("image smaller than eval crop size");
    int y0 = (img.height - crop) / 2, x0 = (img.width - crop) / 2;
    Tensor<float> out(img.channels, crop, crop);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

std::vector<std::string> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    return paths;
}

std::vector<Tensor<float>> load_eval_images(const RunConfig& cfg) {
    auto paths = list_pngs(cfg.test_dir);
    std::vector<Tensor<float>> imgs;
    for (const auto& p : paths) {
        if (cfg.eval_max_images > 0 && int(imgs.size()) >= cfg.eval_max_images) break;
        imgs.push_back(center_crop(load_png(p), cfg.eval_crop));
    }
    if (imgs.empty()) throw IoError("no usable test images in " + cfg.test_dir);
    return imgs;
}

// ---- degrade ----------------------------------------------------------------

int cmd_degrade(const RunConfig& cfg, const std::vector<std::string>& images,
                const std::string& out_dir, uint64_t seed) {
    ensure_dir(out_dir);
    bool any_task = false;
    size_t image_index = 0;
    for (const auto& path : images) {
        Tensor<float> x = load_png(path);
        std::string stem = fs::path(path).stem().string();
        for (const auto& task : cfg.tasks) {
            if (task.mode != TaskMode::iterative) continue;
            any_task = true;
            OperatorDescriptor desc = task.operator_factory(
                x.channels, x.height, x.width,
                derive_seed(seed, "degrade:" + task.name, image_index));
            auto op = make_operator(desc);
            std::vector<float> xc = measure(*op, x);
            Tensor<float> preview = lift(*op, xc);

            std::string base = out_dir + "/" + stem + "." + task.name;
            json meta = {{"descriptor", desc.to_json()},
                         {"task", task.name},
                         {"input", fs::path(path).filename().string()},
                         {"input_crc", crc_hex(path)},
                         {"seed", seed}};
            MeasurementFile m;
            m.meta_json = meta.dump();
            NamedTensorF t;
            t.name = "measurement";
            t.dims = {uint64_t(xc.size())};
            t.data = xc;
            m.tensors.push_back(std::move(t));
            write_measurement(base + ".twm", m);
            save_png(preview.clamped(0.0f, 1.0f), base + ".preview.png");
            write_json_file(base + ".preview.png.prov.json", meta);

            double dpsnr = degraded_baseline(*op, x.cast<double>());
            std::printf("%s %s: K=%d degraded PSNR %.2f dB\n", stem.c_str(), task.name.c_str(),
                        op->dim(), dpsnr);
        }
        ++image_index;
    }
    if (!any_task) {
        std::cerr << "twsolve degrade: config has no iterative tasks\n";
        return kExitConfig;
    }
    return 0;
}

// ---- solve ------------------------------------------------------------------

struct SolveFlags {
    std::string preset;
    double beta = -1, h0 = -1, sigma0 = -1, sigmaL = -1;
    int iterations = -1;
    std::string stop_mode;
};

int cmd_solve(const RunConfig& cfg, const std::string& measurement_path,
              const std::string& checkpoint_path, const SolveFlags& flags,
              const std::string& out_dir, uint64_t seed) {
    ensure_dir(out_dir);
    MeasurementFile m = read_measurement(measurement_path);
    json meta = json::parse(m.meta_json);
    OperatorDescriptor desc = OperatorDescriptor::from_json(meta.at("descriptor"));
    auto op = make_operator(desc);
    const NamedTensorF* meas = nullptr;
    for (const auto& t : m.tensors)
        if (t.name == "measurement") meas = &t;
    if (!meas || int(meas->data.size()) != op->dim())
        throw IoError("measurement file does not match its embedded operator");

    BiasFreeCNN<float> net = checkpoint_path.empty()
                                 ? BiasFreeCNN<float>(cfg.model)
                                 : load_checkpoint<float>(checkpoint_path);
    if (net.config().input_channels != desc.channels) {
        std::cerr << "twsolve solve: checkpoint expects " << net.config().input_channels
                  << " channels but the measurement has " << desc.channels << "\n";
        return kExitConfig;
    }

    SolverConfig sc = config_preset(flags.preset.empty() ? "medium" : flags.preset);
    if (flags.beta >= 0) sc.beta = flags.beta;
    if (flags.h0 >= 0) sc.h0 = flags.h0;
    if (flags.sigma0 >= 0) sc.sigma0 = flags.sigma0;
    if (flags.sigmaL >= 0) sc.sigmaL = flags.sigmaL;
    if (flags.iterations >= 0) sc.max_iters = flags.iterations;
    if (!flags.stop_mode.empty()) {
        if (flags.stop_mode == "fixed_iters") sc.stop_mode = StopMode::fixed_iters;
        else if (flags.stop_mode == "sigma_threshold") sc.stop_mode = StopMode::sigma_threshold;
        else throw ConfigError("config error at --stop-mode: must be fixed_iters or sigma_threshold");
    }
    sc.rng_seed = seed;
    try {
        sc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config error at solver flags: ") + e.what());
    }

    std::string stem = fs::path(measurement_path).stem().string();
    std::string base = out_dir + "/" + stem;
    try {
        auto [y, trace] = run<float>(net, *op, meas->data, sc);
        save_png(y.clamped(0.0f, 1.0f), base + ".out.png");
        trace.write_tsv(base + ".trace.tsv");
        json prov = {{"measurement", fs::path(measurement_path).filename().string()},
                     {"measurement_crc", crc_hex(measurement_path)},
                     {"checkpoint", checkpoint_path.empty()
                                        ? "init:" + std::to_string(cfg.model.init_seed)
                                        : crc_hex(checkpoint_path)},
                     {"operator", desc.to_json()},
                     {"solver",
                      {{"sigma0", sc.sigma0},
                       {"sigmaL", sc.sigmaL},
                       {"h0", sc.h0},
                       {"beta", sc.beta},
                       {"iterations", sc.max_iters},
                       {"stop_mode", sc.stop_mode == StopMode::fixed_iters ? "fixed_iters"
                                                                           : "sigma_threshold"}}},
                     {"seed", seed},
                     {"iterations_run", trace.rows.size()},
                     {"cap_hit", trace.cap_hit},
                     {"gamma_clamps", trace.gamma_clamps}};
        write_json_file(base + ".out.png.prov.json", prov);
        std::printf("%s: %zu iterations, final sigma_est %.4g, wrote %s.out.png\n", stem.c_str(),
                    trace.rows.size(), trace.rows.empty() ? 0.0 : trace.rows.back().sigma_est,
                    base.c_str());
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("diverged") != std::string::npos) {
            std::cerr << "twsolve solve: " << e.what() << "\n";
            return kExitSolveDiverged;
        }
        throw;
    }
    return 0;
}

// ---- train / pretrain -------------------------------------------------------

void print_dry_run(const RunConfig& cfg, const std::string& mode) {
    std::printf("mode: %s\n", mode.c_str());
    std::printf("model: depth %d, %d channels, kernel %d, %d input channels (%zu parameters)\n",
                cfg.model.depth, cfg.model.channels, cfg.model.kernel_size,
                cfg.model.input_channels, BiasFreeCNN<float>(cfg.model).parameter_count());
    std::printf("train: %d epochs, batch %d, crop %d, lr0 %g, weight decay %g, loss %s\n",
                cfg.train.epochs, cfg.train.batch_size, cfg.train.crop_size, cfg.train.lr0,
                cfg.train.weight_decay, cfg.train.loss_kind == LossKind::MSE ? "mse" : "l1");
    if (mode == "pretrain") {
        std::printf("pretrain sigma range: U(%g, %g)/255\n", cfg.pretrain_sigma_min,
                    cfg.pretrain_sigma_max);
        return;
    }
    std::printf("%-12s %-10s %-8s %-28s\n", "task", "mode", "weight", "solver");
    for (const auto& t : cfg.tasks) {
        char weight[32], solver[64];
        if (t.mode == TaskMode::iterative) {
            std::snprintf(weight, sizeof(weight), "%.4g", task_weight(cfg.weights, t));
            std::snprintf(solver, sizeof(solver), "T=%d beta=%g h0=%g sigma0=%g",
                          t.solver.max_iters, t.solver.beta, t.solver.h0, t.solver.sigma0);
        } else {
            if (cfg.weights.kind == WeightKind::normalised)
                std::snprintf(weight, sizeof(weight), "per-sigma");
            else
                std::snprintf(weight, sizeof(weight), "%.4g", task_weight(cfg.weights, t, 0.0));
            std::snprintf(solver, sizeof(solver), "sigma U(%g, %g)/255", t.sigma_min, t.sigma_max);
        }
        std::printf("%-12s %-10s %-8s %-28s\n", t.name.c_str(),
                    t.mode == TaskMode::iterative ? "iterative" : "oneshot", weight, solver);
    }
}

int cmd_train(RunConfig cfg, const std::string& mode, bool dry_run, bool resume,
              const std::string& out_dir) {
    if (dry_run) {
        print_dry_run(cfg, mode);
        return 0;
    }
    ensure_dir(out_dir);
    std::string last_ckpt = out_dir + "/ckpt_last.ckpt";
    std::string state_path = out_dir + "/train_state.json";

    BiasFreeCNN<float> net(cfg.model);
    if (resume) {
        if (!fs::exists(last_ckpt) || !fs::exists(state_path))
            throw IoError("nothing to resume in " + out_dir);
        net = load_checkpoint<float>(last_ckpt);
        std::ifstream f(state_path);
        json st = json::parse(f);
        cfg.train.start_epoch = st.at("epochs_done").get<int>();
        if (cfg.train.start_epoch >= cfg.train.epochs) {
            std::printf("training already complete (%d epochs)\n", cfg.train.start_epoch);
            return 0;
        }
    } else if (!cfg.init_checkpoint.empty()) {
        net = load_checkpoint<float>(cfg.init_checkpoint);
    }

    PatchDataset dataset(cfg.train_dir, cfg.train.crop_size, cfg.train.augment, cfg.seed);
    auto on_cycle_end = [&](int epoch) {
        char name[64];
        std::snprintf(name, sizeof(name), "/ckpt_epoch%04d.ckpt", epoch + 1);
        save_checkpoint(net, out_dir + name);
        save_checkpoint(net, last_ckpt);
        write_json_file(state_path, json{{"epochs_done", epoch + 1}, {"mode", mode}});
    };

    try {
        TrainingHistory hist;
        if (mode == "pretrain")
            hist = pretrain_denoiser(net, dataset, cfg.pretrain_sigma_min, cfg.pretrain_sigma_max,
                                     cfg.train, on_cycle_end);
        else
            hist = fine_tune(net, dataset, cfg.tasks, cfg.weights, cfg.train, on_cycle_end);
        std::string hist_path = cfg.train.start_epoch == 0
                                    ? out_dir + "/history.tsv"
                                    : out_dir + "/history_from_epoch" +
                                          std::to_string(cfg.train.start_epoch) + ".tsv";
        hist.save_tsv(hist_path);
        save_checkpoint(net, last_ckpt);
        write_json_file(state_path, json{{"epochs_done", cfg.train.epochs}, {"mode", mode}});
        std::printf("trained %d epochs, final checkpoint %s\n",
                    cfg.train.epochs - cfg.train.start_epoch, last_ckpt.c_str());
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("diverged") != std::string::npos) {
            std::cerr << "twsolve " << mode << ": " << e.what()
                      << " (last checkpoint kept at " << last_ckpt << ")\n";
            return kExitTrainDiverged;
        }
        throw;
    }
    return 0;
}

// ---- eval -------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const std::vector<std::string>& model_args, int jobs,
             const std::string& out_dir) {
    ensure_dir(out_dir);
    std::vector<std::pair<std::string, BiasFreeCNN<float>>> nets;
    std::vector<BenchmarkModel> models;
    for (const auto& arg : model_args) {
        auto eq = arg.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config error at eval models: expected name=checkpoint, got " + arg);
        std::string name = arg.substr(0, eq), path = arg.substr(eq + 1);
        nets.emplace_back(name, load_checkpoint<float>(path));
        models.push_back({name, nullptr, crc_hex(path)});
    }
    if (nets.empty()) {
        nets.emplace_back("init", BiasFreeCNN<float>(cfg.model));
        models.push_back({"init", nullptr, "init:" + std::to_string(cfg.model.init_seed)});
    }
    for (size_t i = 0; i < nets.size(); ++i) models[i].model = &nets[i].second;

    std::vector<BenchmarkTask> tasks;
    for (const auto& t : cfg.tasks) {
        if (t.mode != TaskMode::iterative) continue;
        BenchmarkTask bt;
        bt.name = t.name;
        bt.factory = t.operator_factory;
        bt.solver = t.solver;
        bt.setting = std::to_string(t.solver.max_iters);
        tasks.push_back(std::move(bt));
    }

    std::vector<Tensor<float>> images = load_eval_images(cfg);
    EvalReport solver_rep, denoise_rep;
    if (!tasks.empty())
        solver_rep = run_benchmark(models, tasks, images, cfg.eval_seeds, jobs);
    if (!cfg.eval_sigmas.empty())
        denoise_rep = denoise_benchmark(models, cfg.eval_sigmas, images, cfg.seed);

    EvalReport all;
    all.rows = solver_rep.rows;
    all.rows.insert(all.rows.end(), denoise_rep.rows.begin(), denoise_rep.rows.end());
    if (all.rows.empty()) {
        std::cerr << "twsolve eval: nothing to evaluate (no tasks and no sigmas)\n";
        return kExitConfig;
    }
    all.save_tsv(out_dir + "/report.tsv");

    std::string baseline = models.front().name;
    std::string table;
    if (!solver_rep.rows.empty())
        table += "Solver benchmark (PSNR dB, deltas vs " + baseline + ")\n" +
                 solver_rep.format_table(baseline) + "\n";
    if (!denoise_rep.rows.empty())
        table += "One-shot denoising (PSNR dB, deltas vs " + baseline + ")\n" +
                 denoise_rep.format_table(baseline);
    {
        std::ofstream f(out_dir + "/report.txt", std::ios::trunc);
        if (!f) throw IoError("cannot write " + out_dir + "/report.txt");
        f << table;
    }
    std::fputs(table.c_str(), stdout);

    size_t failed = 0;
    for (const auto& r : all.rows)
        if (!r.error.empty()) {
            ++failed;
            std::cerr << "row failed: " << r.task << "/" << r.model << ": " << r.error << "\n";
        }
    if (failed == all.rows.size()) return kExitEvalAllFailed;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"denoiser-prior inverse solver"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    uint64_t seed = 0;
    bool seed_given = false;
    int jobs = 0;
    app.add_option("--config", config_path, "JSON configuration file")->required();
    app.add_option("--out", out_dir, "output directory (default: config output_dir)");
    app.add_option("--seed", seed, "override the global seed")->each([&](const std::string&) {
        seed_given = true;
    });
    app.add_option("--jobs", jobs, "parallel solver runs (default: config jobs)");

    auto* degrade = app.add_subcommand("degrade", "measure input images for every task");
    std::vector<std::string> degrade_images;
    degrade->add_option("images", degrade_images, "input PNG files")->required();

    auto* solve = app.add_subcommand("solve", "reconstruct from a measurement file");
    std::string measurement_path, checkpoint_path;
    SolveFlags sflags;
    solve->add_option("measurement", measurement_path, "measurement (.twm) file")->required();
    solve->add_option("--checkpoint", checkpoint_path, "denoiser checkpoint (default: fresh init)");
    solve->add_option("--preset", sflags.preset, "solver preset (short/medium/long/long_corrected)");
    solve->add_option("--beta", sflags.beta, "noise retention override");
    solve->add_option("--h0", sflags.h0, "initial step size override");
    solve->add_option("--sigma0", sflags.sigma0, "initial noise level override");
    solve->add_option("--sigmaL", sflags.sigmaL, "stopping noise level override");
    solve->add_option("--iterations", sflags.iterations, "iteration count override");
    solve->add_option("--stop-mode", sflags.stop_mode, "fixed_iters or sigma_threshold");

    auto* train = app.add_subcommand("train", "multi-task unrolled fine-tuning");
    bool dry_run = false, resume = false;
    train->add_flag("--dry-run", dry_run, "validate config and print the task table only");
    train->add_flag("--resume", resume, "continue from the last checkpoint in the output dir");

    auto* pretrain = app.add_subcommand("pretrain", "plain denoising pretraining");
    pretrain->add_flag("--dry-run", dry_run, "validate config and print the setup only");
    pretrain->add_flag("--resume", resume, "continue from the last checkpoint in the output dir");

    auto* eval = app.add_subcommand("eval", "benchmark checkpoints and write reports");
    std::vector<std::string> eval_models;
    eval->add_option("models", eval_models, "checkpoints as name=path (default: fresh init)");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_given) {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if (out_dir.empty()) out_dir = cfg.output_dir;
        if (jobs <= 0) jobs = cfg.jobs;

        if (degrade->parsed()) return cmd_degrade(cfg, degrade_images, out_dir, cfg.seed);
        if (solve->parsed())
            return cmd_solve(cfg, measurement_path, checkpoint_path, sflags, out_dir, cfg.seed);
        if (train->parsed()) {
            if (cfg.train_mode == "pretrain")
                return cmd_train(cfg, "pretrain", dry_run, resume, out_dir);
            return cmd_train(cfg, "finetune", dry_run, resume, out_dir);
        }
        if (pretrain->parsed()) return cmd_train(cfg, "pretrain", dry_run, resume, out_dir);
        if (eval->parsed()) return cmd_eval(cfg, eval_models, jobs, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "twsolve: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "twsolve: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "twsolve: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "twsolve: " << e.what() << "\n";
        return kExitIo;
    }
    return 0;
}
