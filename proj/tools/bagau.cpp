// Command-line entry point: phantom, train, predict, evaluate, ablate.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bagau/error.hpp"
#include "bagau/phantom.hpp"
#include "bagau/pipeline.hpp"

using namespace bagau;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, data_error = 3, numerical_abort = 4 };

struct Common {
    std::string config;
    std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "JSON run configuration");
    cmd->add_option("-s,--set", c.set, "override, e.g. --set train.lr=0.001 (repeatable)");
}

RunConfig resolve(const Common& c, std::vector<std::string> extra) {
    std::vector<std::string> all = c.set;
    all.insert(all.end(), extra.begin(), extra.end());
    std::optional<std::filesystem::path> file;
    if (!c.config.empty()) file = c.config;
    return load_run_config(file, all);
}

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

void print_epoch(const EpochRecord& r) {
    std::printf("epoch %4d  loss %.6f  val DSC %6.2f  (%.1fs)\n", r.epoch, r.train_loss, r.val_dsc,
                r.wall_time);
    std::fflush(stdout);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
    if (!out) throw DataError("cannot write " + p.string());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Case ids named by --cases, or a subset of a split.json, or every case
// directory under the given root.
std::vector<std::string> select_cases(const std::string& cases, const std::string& split_file,
                                      const std::string& subset, const std::filesystem::path& root) {
    if (!cases.empty()) return split_list(cases);
    if (!split_file.empty()) {
        std::ifstream in(split_file);
        if (!in) throw ConfigError("cannot read split file " + split_file);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("split file " + split_file + ": " + e.what());
        }
        if (!j.contains(subset) || !j.at(subset).is_array()) {
            throw ConfigError("split file has no '" + subset + "' list");
        }
        return j.at(subset).get<std::vector<std::string>>();
    }
    return list_mask_cases(root);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Atlas-guided attention U-Net for lesion segmentation"};
    app.require_subcommand(1);

    Common pc;
    std::string ph_out;
    std::optional<int> ph_n;
    std::optional<std::uint64_t> ph_seed;
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
    add_common(phantom, pc);
    phantom->add_option("-o,--out", ph_out, "output dataset directory")->required();
    phantom->add_option("--n-cases", ph_n, "number of cases");
    phantom->add_option("--seed", ph_seed, "generator seed");

    Common tc;
    std::string tr_data, tr_out;
    bool tr_overfit = false, tr_resume = false;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, tc);
    train_cmd->add_option("-d,--data", tr_data, "dataset directory or manifest");
    train_cmd->add_option("-o,--out", tr_out, "run directory")->required();
    train_cmd->add_flag("--overfit", tr_overfit, "one-batch overfit check");
    train_cmd->add_flag("--resume", tr_resume, "continue from <out>/last.ckpt");

    Common prc;
    std::string pr_ckpt, pr_out, pr_data, pr_cases, pr_split, pr_subset = "test";
    std::vector<std::string> pr_case_dirs;
    std::optional<double> pr_threshold;
    bool pr_overlay = false;
    auto* predict = app.add_subcommand("predict", "segment cases with a checkpoint");
    add_common(predict, prc);
    predict->add_option("-k,--checkpoint", pr_ckpt, "checkpoint file")->required();
    predict->add_option("-o,--out", pr_out, "prediction directory")->required();
    predict->add_option("--case", pr_case_dirs, "case directory (repeatable)");
    predict->add_option("-d,--data", pr_data, "dataset root, with --cases or --split-file");
    predict->add_option("--cases", pr_cases, "comma-separated case ids under --data");
    predict->add_option("--split-file", pr_split, "split.json of a training run");
    predict->add_option("--subset", pr_subset, "train, val or test (with --split-file)");
    predict->add_option("-t,--threshold", pr_threshold, "binarization threshold");
    predict->add_flag("--overlay", pr_overlay, "write per-slice PNG overlays");

    Common ec;
    std::string ev_pred, ev_gt, ev_out, ev_cases, ev_split, ev_subset = "test";
    std::optional<int> ev_conn;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions against references");
    add_common(evaluate_cmd, ec);
    evaluate_cmd->add_option("-p,--pred", ev_pred, "prediction directory")->required();
    evaluate_cmd->add_option("-g,--gt", ev_gt, "reference dataset directory")->required();
    evaluate_cmd->add_option("-o,--out", ev_out, "report directory");
    evaluate_cmd->add_option("--cases", ev_cases, "comma-separated case ids");
    evaluate_cmd->add_option("--split-file", ev_split, "split.json of a training run");
    evaluate_cmd->add_option("--subset", ev_subset, "train, val or test (with --split-file)");
    evaluate_cmd->add_option("--connectivity", ev_conn, "6, 18 or 26");

    Common ac;
    std::string ab_data, ab_out, ab_variants;
    auto* ablate = app.add_subcommand("ablate", "train and compare model variants");
    add_common(ablate, ac);
    ablate->add_option("-d,--data", ab_data, "dataset directory or manifest");
    ablate->add_option("-o,--out", ab_out, "output directory")->required();
    ablate->add_option("--variants", ab_variants, "comma-separated variants (default: all six)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        if (*phantom) {
            std::vector<std::string> extra;
            if (ph_n) extra.push_back("phantom.n_cases=" + std::to_string(*ph_n));
            if (ph_seed) extra.push_back("phantom.seed=" + std::to_string(*ph_seed));
            const RunConfig cfg = resolve(pc, extra);
            const Manifest m = generate_dataset(cfg.phantom, ph_out);
            echo_config(cfg, ph_out);
            std::cout << (m.root / kManifestName).string() << '\n';
        } else if (*train_cmd) {
            std::vector<std::string> extra;
            if (!tr_data.empty()) extra.push_back("data.dataset=" + json_string(tr_data));
            if (tr_overfit) extra.push_back("train.overfit=true");
            const RunConfig cfg = resolve(tc, extra);
            TrainOptions opt;
            opt.resume = tr_resume;
            opt.on_epoch = print_epoch;
            const TrainResult r = train_from_config(cfg, tr_out, opt);
            std::printf("best val DSC %.2f at epoch %d; checkpoints in %s\n", r.best_val_dsc,
                        r.best_epoch, tr_out.c_str());
        } else if (*predict) {
            const Checkpoint ck = load_checkpoint(pr_ckpt);
            std::unique_ptr<LoadedModel> model;
            if (!prc.config.empty() || !prc.set.empty()) {
                const RunConfig cfg = resolve(prc, {});
                model = std::make_unique<LoadedModel>(ck, &cfg.model);
            } else {
                model = std::make_unique<LoadedModel>(ck);
            }
            RunConfig echo = resolve(prc, {});
            echo.model = model->spec();
            if (pr_threshold) echo.train.threshold = *pr_threshold;
            echo.train.validate();
            PredictOptions po;
            po.threshold = echo.train.threshold;
            std::vector<CaseRecord> cases;
            for (const auto& d : pr_case_dirs) {
                const std::filesystem::path p(d);
                const std::string id = p.filename().empty() ? p.parent_path().filename().string()
                                                            : p.filename().string();
                cases.push_back(load_case(p, id, false));
            }
            if (!pr_data.empty()) {
                const Manifest m = read_manifest(pr_data);
                const auto ids = select_cases(pr_cases, pr_split, pr_subset, m.root);
                for (const auto& id : ids) cases.push_back(load_case(case_dir(m.root, id), id, false));
            }
            if (cases.empty()) {
                throw ConfigError("nothing to predict: give --case or --data");
            }
            echo_config(echo, pr_out);
            for (const auto& c : cases) {
                const PredictionVolume p = write_prediction(*model, c, pr_out, po, pr_overlay);
                std::size_t n = 0;
                for (float v : p.mask.data) n += v > 0.5f;
                std::printf("%s: %zu voxels above %.3f\n", c.case_id().c_str(), n, po.threshold);
            }
        } else if (*evaluate_cmd) {
            std::vector<std::string> extra;
            if (ev_conn) extra.push_back("eval.connectivity=" + std::to_string(*ev_conn));
            const RunConfig cfg = resolve(ec, extra);
            const auto ids = select_cases(ev_cases, ev_split, ev_subset, ev_pred);
            const MetricReport r = evaluate(ev_pred, ev_gt, ids, cfg.connectivity);
            std::cout << r.to_table();
            if (!ev_out.empty()) {
                echo_config(cfg, ev_out);
                write_text(std::filesystem::path(ev_out) / "report.json", r.to_json() + "\n");
                write_text(std::filesystem::path(ev_out) / "report.txt", r.to_table());
            }
        } else if (*ablate) {
            std::vector<std::string> extra;
            if (!ab_data.empty()) extra.push_back("data.dataset=" + json_string(ab_data));
            const RunConfig cfg = resolve(ac, extra);
            std::vector<Variant> variants;
            if (ab_variants.empty()) {
                variants.assign(all_variants().begin(), all_variants().end());
            } else {
                for (const auto& name : split_list(ab_variants)) variants.push_back(parse_variant(name));
            }
            const AblationReport r =
                run_ablation(cfg, variants, ab_out, [](Variant v, const EpochRecord& e) {
                    std::printf("[%s] ", std::string(to_string(v)).c_str());
                    print_epoch(e);
                });
            std::cout << r.to_table();
            write_text(std::filesystem::path(ab_out) / "ablation.txt", r.to_table());
            write_text(std::filesystem::path(ab_out) / "ablation.json", r.to_json() + "\n");
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return numerical_abort;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
    return ok;
}
