#include "tws/eval.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "tws/rng.hpp"

namespace tws {

namespace {

// Two-sided 95% t quantiles for small seed counts; df > 30 falls back to the
// normal value.
double t95(int df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306,
                                   2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
                                   2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
                                   2.060,  2.056, 2.052, 2.048, 2.045, 2.042};
    if (df < 1) return 0;
    if (df <= 30) return table[df - 1];
    return 1.96;
}

double ci_half_width(const std::vector<double>& per_seed_means) {
    size_t n = per_seed_means.size();
    if (n < 2) return 0;
    double mean = 0;
    for (double v : per_seed_means) mean += v;
    mean /= double(n);
    double var = 0;
    for (double v : per_seed_means) var += (v - mean) * (v - mean);
    var /= double(n - 1);
    return t95(int(n) - 1) * std::sqrt(var / double(n));
}

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string join(const std::vector<double>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ',';
        s += num(xs[i]);
    }
    return s;
}

template <typename Fn>
void parallel_rows(size_t n, int jobs, Fn&& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int j = 0; j < jobs; ++j)
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

std::string provenance_key(const nlohmann::json& provenance) {
    std::string s = provenance.dump();
    uint32_t crc = uint32_t(crc32(0, reinterpret_cast<const Bytef*>(s.data()), uInt(s.size())));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc);
    return buf;
}

void EvalReport::save_tsv(const std::string& path) const {
    std::set<std::string> seen;
    std::vector<const EvalRow*> out;
    EvalReport existing;
    if (std::ifstream(path).good()) existing = load_tsv(path);
    for (const auto& r : existing.rows)
        if (seen.insert(r.key).second) out.push_back(&r);
    for (const auto& r : rows)
        if (seen.insert(r.key).second) out.push_back(&r);

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write report: " + path);
        f << "key\ttask\tmodel\tsetting\tmean_psnr\tdegraded\tci95_half\tseeds\tper_image\t"
             "error\tprovenance\n";
        for (const auto* r : out) {
            std::string seeds;
            for (size_t i = 0; i < r->seeds.size(); ++i) {
                if (i) seeds += ',';
                seeds += std::to_string(r->seeds[i]);
            }
            f << r->key << '\t' << r->task << '\t' << r->model << '\t' << r->setting << '\t'
              << num(r->mean_psnr) << '\t' << num(r->degraded) << '\t' << num(r->ci_half) << '\t'
              << seeds << '\t' << join(r->per_image) << '\t' << r->error << '\t'
              << r->provenance.dump() << '\n';
        }
    }
    std::filesystem::rename(tmp, path);
}

EvalReport EvalReport::load_tsv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open report: " + path);
    EvalReport rep;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() < 11) continue;
        EvalRow r;
        r.key = cols[0];
        r.task = cols[1];
        r.model = cols[2];
        r.setting = cols[3];
        r.mean_psnr = std::stod(cols[4]);
        r.degraded = std::stod(cols[5]);
        r.ci_half = std::stod(cols[6]);
        {
            std::stringstream s2(cols[7]);
            std::string tok;
            while (std::getline(s2, tok, ',')) if (!tok.empty()) r.seeds.push_back(std::stoull(tok));
        }
        {
            std::stringstream s2(cols[8]);
            std::string tok;
            while (std::getline(s2, tok, ',')) if (!tok.empty()) r.per_image.push_back(std::stod(tok));
        }
        r.error = cols[9];
        r.provenance = nlohmann::json::parse(cols[10]);
        rep.rows.push_back(std::move(r));
    }
    return rep;
}

std::string EvalReport::format_table(const std::string& baseline_model) const {
    // Collect ordered task and model/setting axes.
    std::vector<std::string> tasks;
    std::vector<std::pair<std::string, std::string>> columns;  // (model, setting)
    std::map<std::pair<std::string, std::string>, const EvalRow*> cell;
    std::map<std::string, double> degraded;
    for (const auto& r : rows) {
        if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
        auto colid = std::make_pair(r.model, r.setting);
        if (std::find(columns.begin(), columns.end(), colid) == columns.end())
            columns.push_back(colid);
        cell[{r.task, r.model + "@" + r.setting}] = &r;
        if (r.degraded != 0) degraded[r.task] = r.degraded;
    }

    std::ostringstream out;
    auto pad = [](std::string s, size_t w) {
        if (s.size() < w) s.resize(w, ' ');
        return s;
    };
    const size_t colw = 22;
    out << pad("Task", 14) << pad("Degraded", 10);
    for (const auto& [m, s] : columns) out << pad(m + " (" + s + ")", colw);
    out << "\n";
    std::map<std::string, std::vector<double>> col_values;
    for (const auto& task : tasks) {
        out << pad(task, 14);
        char buf[32];
        if (degraded.count(task))
            std::snprintf(buf, sizeof(buf), "%.2f", degraded[task]);
        else
            std::snprintf(buf, sizeof(buf), "%s", "-");
        out << pad(buf, 10);
        const EvalRow* base = nullptr;
        for (const auto& [m, s] : columns) {
            if (m != baseline_model) continue;
            auto it = cell.find({task, m + "@" + s});
            if (it != cell.end()) { base = it->second; break; }
        }
        for (const auto& [m, s] : columns) {
            auto it = cell.find({task, m + "@" + s});
            if (it == cell.end()) {
                out << pad("-", colw);
                continue;
            }
            const EvalRow* r = it->second;
            std::string txt;
            if (!r->error.empty()) {
                txt = "failed";
            } else {
                std::snprintf(buf, sizeof(buf), "%.2f", r->mean_psnr);
                txt = buf;
                if (base && r->setting == base->setting) {
                    std::snprintf(buf, sizeof(buf), " (%+.2f)", r->mean_psnr - base->mean_psnr);
                    txt += buf;
                }
                col_values[m + "@" + s].push_back(r->mean_psnr);
            }
            out << pad(txt, colw);
        }
        out << "\n";
    }
    out << pad("Mean", 24);
    for (const auto& [m, s] : columns) {
        auto& vals = col_values[m + "@" + s];
        if (vals.empty()) {
            out << pad("-", colw);
            continue;
        }
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= double(vals.size());
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", mean);
        out << pad(buf, colw);
    }
    out << "\n";
    return out.str();
}

EvalReport run_benchmark(const std::vector<BenchmarkModel>& models,
                         const std::vector<BenchmarkTask>& tasks,
                         const std::vector<Tensor<float>>& dataset,
                         const std::vector<uint64_t>& seeds, int jobs) {
    if (dataset.empty()) throw std::invalid_argument("run_benchmark: empty dataset");
    EvalReport rep;
    struct Job {
        const BenchmarkModel* model;
        const BenchmarkTask* task;
    };
    std::vector<Job> jobs_list;
    for (const auto& m : models)
        for (const auto& t : tasks) jobs_list.push_back({&m, &t});
    rep.rows.resize(jobs_list.size());

    parallel_rows(jobs_list.size(), jobs, [&](size_t ji) {
        const auto& [model, task] = jobs_list[ji];
        EvalRow row;
        row.task = task->name;
        row.model = model->name;
        row.setting = task->setting;
        row.seeds = seeds;
        row.provenance = {
            {"task", task->name},
            {"model", model->name},
            {"checkpoint", model->checkpoint_hash},
            {"setting", task->setting},
            {"solver",
             {{"sigma0", task->solver.sigma0},
              {"sigmaL", task->solver.sigmaL},
              {"h0", task->solver.h0},
              {"beta", task->solver.beta},
              {"iters", task->solver.max_iters}}},
            {"seeds", seeds},
            {"images", dataset.size()}};
        row.key = provenance_key(row.provenance);
        try {
            std::vector<double> seed_means;
            double degraded_sum = 0;
            for (uint64_t seed : seeds) {
                double acc = 0;
                for (size_t i = 0; i < dataset.size(); ++i) {
                    const Tensor<float>& x = dataset[i];
                    OperatorDescriptor desc = task->factory(
                        x.channels, x.height, x.width,
                        derive_seed(seed, "op:" + task->name, i));
                    auto op = make_operator(desc);
                    std::vector<float> xc = measure(*op, x);
                    if (seed == seeds.front()) degraded_sum += degraded_baseline(*op, x);
                    SolverConfig cfg = task->solver;
                    cfg.rng_seed = derive_seed(seed, "solve:" + task->name, i);
                    auto [y, trace] = run(*model->model, *op, xc, cfg);
                    double p = psnr(y.clamped(0.0f, 1.0f), x);
                    acc += p;
                    row.per_image.push_back(p);
                }
                seed_means.push_back(acc / double(dataset.size()));
            }
            double mean = 0;
            for (double v : seed_means) mean += v;
            row.mean_psnr = mean / double(seed_means.size());
            row.degraded = degraded_sum / double(dataset.size());
            row.ci_half = ci_half_width(seed_means);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rep.rows[ji] = std::move(row);
    });
    return rep;
}

EvalReport denoise_benchmark(const std::vector<BenchmarkModel>& models,
                             const std::vector<double>& sigmas,
                             const std::vector<Tensor<float>>& dataset, uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("denoise_benchmark: empty dataset");
    EvalReport rep;
    for (double sigma : sigmas) {
        std::string task = "denoise_s" + std::to_string(int(std::lround(sigma)));
        // Noisy images are fixed per (seed, sigma) so every model sees the
        // same inputs.
        std::vector<Tensor<float>> noisy;
        Rng rng(derive_seed(seed, "denoise-noise", uint64_t(std::lround(sigma * 1000))));
        for (const auto& x : dataset) {
            Tensor<float> y = x;
            for (auto& v : y.v) v += float(sigma / 255.0 * rng.normal());
            noisy.push_back(std::move(y));
        }

        EvalRow input_row;
        input_row.task = task;
        input_row.model = "input";
        input_row.setting = "-";
        input_row.seeds = {seed};
        double acc = 0;
        for (size_t i = 0; i < dataset.size(); ++i) {
            double p = sigma == 0 ? kPsnrCap : psnr(noisy[i].clamped(0.0f, 1.0f), dataset[i]);
            input_row.per_image.push_back(p);
            acc += p;
        }
        input_row.mean_psnr = acc / double(dataset.size());
        input_row.provenance = {{"task", task}, {"model", "input"}, {"seed", seed},
                                {"images", dataset.size()}};
        input_row.key = provenance_key(input_row.provenance);
        rep.rows.push_back(std::move(input_row));

        for (const auto& m : models) {
            EvalRow row;
            row.task = task;
            row.model = m.name;
            row.setting = "oneshot";
            row.seeds = {seed};
            row.provenance = {{"task", task},
                              {"model", m.name},
                              {"checkpoint", m.checkpoint_hash},
                              {"seed", seed},
                              {"images", dataset.size()}};
            row.key = provenance_key(row.provenance);
            try {
                double sum = 0;
                for (size_t i = 0; i < dataset.size(); ++i) {
                    Tensor<float> out = m.model->denoise(noisy[i]);
                    double p = psnr(out.clamped(0.0f, 1.0f), dataset[i]);
                    row.per_image.push_back(p);
                    sum += p;
                }
                row.mean_psnr = sum / double(dataset.size());
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            rep.rows.push_back(std::move(row));
        }
    }
    return rep;
}

}  // namespace tws
