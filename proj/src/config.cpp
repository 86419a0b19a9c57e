#include "tws/config.hpp"

#include <fstream>
#include <set>

namespace tws {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw ConfigError("config error at " + path + ": " + msg);
}

void require_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown key");
}

template <typename T>
T get(const json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(path + "." + key, "wrong type");
    }
}

template <typename T>
T get_required(const json& j, const std::string& path, const std::string& key) {
    if (!j.contains(key)) fail(path + "." + key, "missing required key");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(path + "." + key, "wrong type");
    }
}

SolverConfig parse_solver(const json& j, const std::string& path) {
    SolverConfig c;
    if (j.contains("preset")) {
        try {
            c = config_preset(get_required<std::string>(j, path, "preset"));
        } catch (const std::invalid_argument& e) {
            fail(path + ".preset", e.what());
        }
    }
    require_keys(j, path,
                 {"preset", "sigma0", "sigmaL", "h0", "beta", "iterations", "stop_mode"});
    c.sigma0 = get(j, path, "sigma0", c.sigma0);
    c.sigmaL = get(j, path, "sigmaL", c.sigmaL);
    c.h0 = get(j, path, "h0", c.h0);
    c.beta = get(j, path, "beta", c.beta);
    c.max_iters = get(j, path, "iterations", c.max_iters);
    std::string mode = get<std::string>(j, path, "stop_mode", "fixed_iters");
    if (mode == "fixed_iters")
        c.stop_mode = StopMode::fixed_iters;
    else if (mode == "sigma_threshold")
        c.stop_mode = StopMode::sigma_threshold;
    else
        fail(path + ".stop_mode", "must be fixed_iters or sigma_threshold");
    try {
        c.validate();
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
    return c;
}

}  // namespace

std::function<OperatorDescriptor(int, int, int, uint64_t)> operator_factory_from_json(
    const json& op) {
    OperatorDescriptor proto;
    proto.kind = op_kind_from_string(op.at("kind").get<std::string>());
    proto.block_size = op.value("block_size", 16);
    proto.keep_fraction = op.value("keep_fraction", 0.10);
    proto.drop_fraction = op.value("drop_fraction", 0.20);
    proto.subspace_dim = op.value("subspace_dim", 0);
    bool fixed_seed = op.contains("seed");
    uint64_t seed0 = op.value("seed", uint64_t(0));
    return [proto, fixed_seed, seed0](int c, int h, int w, uint64_t sample_seed) {
        OperatorDescriptor d = proto;
        d.channels = c;
        d.height = h;
        d.width = w;
        d.seed = fixed_seed ? seed0 : sample_seed;
        d.validate();
        return d;
    };
}

RunConfig parse_config(const json& j) {
    RunConfig cfg;
    cfg.raw = j;
    require_keys(j, "$",
                 {"dataset", "output_dir", "seed", "jobs", "model", "tasks", "weights", "train",
                  "eval"});

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        require_keys(d, "dataset", {"train_dir", "test_dir"});
        cfg.train_dir = get<std::string>(d, "dataset", "train_dir", "");
        cfg.test_dir = get<std::string>(d, "dataset", "test_dir", "");
    }
    cfg.output_dir = get<std::string>(j, "$", "output_dir", cfg.output_dir);
    cfg.seed = get<uint64_t>(j, "$", "seed", 0);
    cfg.jobs = get<int>(j, "$", "jobs", 1);

    if (j.contains("model")) {
        const auto& m = j.at("model");
        require_keys(m, "model", {"depth", "channels", "kernel_size", "input_channels",
                                  "init_seed"});
        cfg.model.depth = get(m, "model", "depth", cfg.model.depth);
        cfg.model.channels = get(m, "model", "channels", cfg.model.channels);
        cfg.model.kernel_size = get(m, "model", "kernel_size", cfg.model.kernel_size);
        cfg.model.input_channels = get(m, "model", "input_channels", cfg.model.input_channels);
        cfg.model.init_seed = get<uint64_t>(m, "model", "init_seed", cfg.model.init_seed);
        try {
            cfg.model.validate();
        } catch (const std::exception& e) {
            fail("model", e.what());
        }
    }

    if (j.contains("tasks")) {
        if (!j.at("tasks").is_array()) fail("tasks", "expected an array");
        int i = 0;
        for (const auto& t : j.at("tasks")) {
            std::string path = "tasks[" + std::to_string(i++) + "]";
            require_keys(t, path,
                         {"name", "mode", "operator", "solver", "sigma_min", "sigma_max"});
            TaskSpec spec;
            spec.name = get_required<std::string>(t, path, "name");
            std::string mode = get<std::string>(t, path, "mode", "iterative");
            if (mode == "iterative") {
                spec.mode = TaskMode::iterative;
                if (!t.contains("operator")) fail(path + ".operator", "missing required key");
                require_keys(t.at("operator"), path + ".operator",
                             {"kind", "block_size", "keep_fraction", "drop_fraction",
                              "subspace_dim", "seed"});
                try {
                    spec.operator_factory = operator_factory_from_json(t.at("operator"));
                } catch (const std::exception& e) {
                    fail(path + ".operator", e.what());
                }
                spec.solver = parse_solver(t.value("solver", json::object()), path + ".solver");
            } else if (mode == "oneshot_denoise") {
                spec.mode = TaskMode::oneshot_denoise;
                spec.sigma_min = get(t, path, "sigma_min", 0.0);
                spec.sigma_max = get(t, path, "sigma_max", 100.0);
            } else {
                fail(path + ".mode", "must be iterative or oneshot_denoise");
            }
            try {
                spec.validate();
            } catch (const std::exception& e) {
                fail(path, e.what());
            }
            cfg.tasks.push_back(std::move(spec));
        }
    }

    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        require_keys(w, "weights", {"kind", "fixed", "normalised", "denoise_table"});
        std::string kind = get<std::string>(w, "weights", "kind", "uniform");
        WeightKind wk;
        if (kind == "uniform") wk = WeightKind::uniform;
        else if (kind == "fixed") wk = WeightKind::fixed;
        else if (kind == "normalised") wk = WeightKind::normalised;
        else fail("weights.kind", "must be uniform, fixed or normalised");
        cfg.weights = make_reference_scheme(wk);
        if (w.contains("fixed"))
            for (auto it = w.at("fixed").begin(); it != w.at("fixed").end(); ++it)
                cfg.weights.fixed_weights[it.key()] = it.value().get<double>();
        if (w.contains("normalised"))
            for (auto it = w.at("normalised").begin(); it != w.at("normalised").end(); ++it)
                cfg.weights.normalised_inv_weights[it.key()] = it.value().get<double>();
        if (w.contains("denoise_table")) {
            cfg.weights.denoise_inv_table.clear();
            for (const auto& e : w.at("denoise_table"))
                cfg.weights.denoise_inv_table.emplace_back(e.at(0).get<double>(),
                                                           e.at(1).get<double>());
        }
        for (const auto& [k, v] : cfg.weights.fixed_weights)
            if (v < 0) fail("weights.fixed." + k, "weights must be >= 0");
        for (const auto& [k, v] : cfg.weights.normalised_inv_weights)
            if (!(v > 0)) fail("weights.normalised." + k, "1/w entries must be positive");
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        require_keys(t, "train",
                     {"mode", "epochs", "batch_size", "crop_size", "flips", "rotations", "lr0",
                      "weight_decay", "first_cycle", "cycle", "loss", "steps_per_epoch",
                      "pretrain_sigma_min", "pretrain_sigma_max", "init_checkpoint",
                      "checkpoint_every"});
        cfg.train_mode = get<std::string>(t, "train", "mode", cfg.train_mode);
        if (cfg.train_mode != "finetune" && cfg.train_mode != "pretrain")
            fail("train.mode", "must be finetune or pretrain");
        cfg.train.epochs = get(t, "train", "epochs", cfg.train.epochs);
        cfg.train.batch_size = get(t, "train", "batch_size", cfg.train.batch_size);
        cfg.train.crop_size = get(t, "train", "crop_size", cfg.train.crop_size);
        cfg.train.augment.flips = get(t, "train", "flips", true);
        cfg.train.augment.rotations = get(t, "train", "rotations", true);
        cfg.train.lr0 = get(t, "train", "lr0", cfg.train.lr0);
        cfg.train.weight_decay = get(t, "train", "weight_decay", cfg.train.weight_decay);
        cfg.train.first_cycle = get(t, "train", "first_cycle", cfg.train.first_cycle);
        cfg.train.cycle = get(t, "train", "cycle", cfg.train.cycle);
        cfg.train.steps_per_epoch = get(t, "train", "steps_per_epoch", 0);
        cfg.pretrain_sigma_min = get(t, "train", "pretrain_sigma_min", 0.0);
        cfg.pretrain_sigma_max = get(t, "train", "pretrain_sigma_max", 100.0);
        cfg.init_checkpoint = get<std::string>(t, "train", "init_checkpoint", "");
        cfg.checkpoint_every = get(t, "train", "checkpoint_every", 0);
        std::string loss = get<std::string>(t, "train", "loss", "mse");
        if (loss == "mse") cfg.train.loss_kind = LossKind::MSE;
        else if (loss == "l1") cfg.train.loss_kind = LossKind::L1;
        else fail("train.loss", "must be mse or l1");
        try {
            cfg.train.validate();
        } catch (const std::exception& e) {
            fail("train", e.what());
        }
    }
    cfg.train.seed = cfg.seed;

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        require_keys(e, "eval", {"seeds", "sigmas", "max_images", "crop_size"});
        if (e.contains("seeds")) {
            cfg.eval_seeds.clear();
            for (const auto& s : e.at("seeds")) cfg.eval_seeds.push_back(s.get<uint64_t>());
        }
        if (e.contains("sigmas")) {
            cfg.eval_sigmas.clear();
            for (const auto& s : e.at("sigmas")) cfg.eval_sigmas.push_back(s.get<double>());
        }
        cfg.eval_max_images = get(e, "eval", "max_images", 0);
        cfg.eval_crop = get(e, "eval", "crop_size", 0);
        if (cfg.eval_seeds.empty()) fail("eval.seeds", "need at least one seed");
    }

    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config error: cannot open " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config error: invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

}  // namespace tws
