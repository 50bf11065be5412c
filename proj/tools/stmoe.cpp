// stmoe: one executable for the whole pipeline — synthesize a city, pretrain,
// transfer or train from scratch, evaluate against the HF baseline, and
// finite-difference-check the gradients.
//
// Exit codes: 0 success, 2 I/O failure, 3 checkpoint/architecture mismatch,
// 64 usage or config error.

#include "CLI11.hpp"

#include "stmoe/checkpoint.hpp"
#include "stmoe/config.hpp"
#include "stmoe/gradcheck.hpp"
#include "stmoe/hf.hpp"
#include "stmoe/metrics.hpp"
#include "stmoe/synth.hpp"
#include "stmoe/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace {

using namespace stmoe;

void apply_set_overrides(RunConfig& rc, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        apply_setting(rc, kv.substr(0, eq), kv.substr(eq + 1));
    }
}

std::string data_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

int argmax_row(const TensorPtr& logits, int row) {
    const int C = logits->cols();
    const double* p = logits->data.data() + static_cast<std::size_t>(row) * C;
    return static_cast<int>(std::max_element(p, p + C) - p);
}

std::vector<SequenceExample> eval_windows_for(const CityData& city, const RunConfig& rc) {
    WindowConfig wc;
    wc.seq_len = rc.model.seq_len;
    wc.min_target_obs = rc.train.min_target_obs;
    wc.history_from_test = rc.train.history_from_test;
    std::vector<SequenceExample> windows;
    for (const auto& [uid, recs] : city.users) {
        auto w = build_forecast_windows(recs, city.G, wc);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }
    if (windows.empty())
        throw std::runtime_error("evaluate: no test-day windows (check the data file)");
    return windows;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::string out, params_file;
    SynthParams flags;  // only fields whose option was counted are used
    CLI::Option *o_users = nullptr, *o_grid = nullptr, *o_seed = nullptr, *o_eps = nullptr,
                *o_days = nullptr;
};

int cmd_generate(const GenerateArgs& a) {
    SynthParams p;
    if (!a.params_file.empty()) p = read_synth_params(a.params_file);
    if (a.o_users->count()) p.users = a.flags.users;
    if (a.o_grid->count()) p.G = a.flags.G;
    if (a.o_seed->count()) p.seed = a.flags.seed;
    if (a.o_eps->count()) p.eps = a.flags.eps;
    if (a.o_days->count()) p.days = a.flags.days;

    const auto records = synthesize_city(p);
    write_city_csv(a.out, records);
    write_sidecar(a.out + ".params", p);
    std::printf("generate: %zu records, %d users, grid %d -> %s\n", records.size(), p.users,
                p.G, a.out.c_str());
    return 0;
}

// ----------------------------------------------------- pretrain / finetune

struct TrainArgs {
    std::string data, config_file, out, from, resume;
    std::vector<std::string> sets;
    int epochs = 0;
    std::uint64_t seed = 0;
    CLI::Option *o_epochs = nullptr, *o_seed = nullptr;
};

int cmd_train(const std::string& phase, const TrainArgs& a) {
    RunConfig rc;
    rc.train = phase == "pretrain"   ? TrainConfig::pretrain_defaults()
               : phase == "finetune" ? TrainConfig::finetune_defaults()
                                     : TrainConfig::scratch_defaults();

    Checkpoint start;
    if (phase == "finetune") {
        start = load_checkpoint(a.from);
        rc.model = config_from_metadata(start.metadata);  // checkpoint owns the architecture
    }
    if (!a.config_file.empty()) apply_config_file(rc, a.config_file);
    apply_set_overrides(rc, a.sets);
    if (a.o_epochs->count()) rc.train.epochs = a.epochs;
    if (a.o_seed->count()) rc.train.seed = a.seed;
    rc.model.validate();
    rc.train.validate();

    const CityData city = load_city(a.data, rc.model.G);
    Model model = Model::init(rc.model, rc.train.seed);
    if (phase == "finetune") load_params(model, start);  // dimension mismatch → exit 3

    std::printf("%s: %lld parameters, %zu users, out=%s\n", phase.c_str(),
                static_cast<long long>(model.parameter_count()), city.users.size(),
                a.out.c_str());
    const TrainResult res = train(model, city, rc.train, a.out, a.resume);
    if (!res.epochs.empty()) {
        const auto& last = res.epochs.back();
        std::printf("%s: epoch %d train_loss=%.6f val_loss=%.6f\n", phase.c_str(), last.epoch,
                    last.train_loss, last.val_loss);
    }
    std::printf("%s: final=%s best=%s (epoch %d)\n", phase.c_str(), res.final_checkpoint.c_str(),
                res.best_checkpoint.c_str(), res.best_epoch);
    return 0;
}

// ----------------------------------------------------------------- evaluate

struct EvalArgs {
    std::string model_path, baseline, data, report, config_file;
    std::vector<std::string> sets;
};

int cmd_evaluate(const EvalArgs& a) {
    if (a.model_path.empty() == a.baseline.empty())
        throw std::invalid_argument("evaluate: pass exactly one of --model and --baseline");
    if (!a.baseline.empty() && a.baseline != "hf")
        throw std::invalid_argument("evaluate: unknown baseline '" + a.baseline +
                                    "' (supported: hf)");

    RunConfig rc;
    Checkpoint ck;
    if (!a.model_path.empty()) {
        ck = load_checkpoint(a.model_path);
        rc.model = config_from_metadata(ck.metadata);
    }
    if (!a.config_file.empty()) apply_config_file(rc, a.config_file);
    apply_set_overrides(rc, a.sets);
    rc.model.validate();

    const CityData city = load_city(a.data, rc.model.G);
    const auto windows = eval_windows_for(city, rc);

    Predictor predict;
    Model model;
    if (!a.model_path.empty()) {
        model = Model::init(rc.model, 1);
        load_params(model, ck);  // dimension mismatch → exit 3
        predict = [&model](const SequenceExample& ex) {
            NoGradGuard off;
            const auto logits = model.full_logits(ex);
            std::vector<int> out;
            for (int i = 0; i < ex.length(); ++i)
                if (ex.loss[i]) out.push_back(argmax_row(logits, i));
            return out;
        };
    } else {
        auto table = std::make_shared<FrequencyTable>(FrequencyTable::fit(city));
        predict = [table](const SequenceExample& ex) {
            std::vector<int> out;
            for (int i = 0; i < ex.length(); ++i)
                if (ex.loss[i]) out.push_back(table->predict(ex.uid, ex.day[i], ex.slot[i]));
            return out;
        };
    }

    const EvalReport report = evaluate_windows(predict, windows, city.G, rc.geo_bleu);
    write_report_csv(a.report, data_stem(a.data), report);
    std::printf("%s\n", report_summary_line(data_stem(a.data), report).c_str());
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::uint64_t seed = 1;
    GradCheckOptions opt;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    std::vector<ModelConfig> sweep;
    if (!a.config_file.empty() || !a.sets.empty()) {
        RunConfig rc;
        if (!a.config_file.empty()) apply_config_file(rc, a.config_file);
        apply_set_overrides(rc, a.sets);
        rc.model.validate();
        sweep.push_back(rc.model);
    } else {
        // default sweep: both hidden widths and both expert counts, dense
        // routing (top_k = K) so the checked function is smooth
        for (int hidden : {8, 64}) {
            for (int experts : {2, 8}) {
                ModelConfig c;
                c.G = 40;
                c.seq_len = 48;
                c.layers = 2;
                c.hidden = hidden;
                c.heads = 4;
                c.ffn = 4 * hidden;
                c.expert_ffn = 4 * hidden;
                c.experts = experts;
                c.top_k = experts;
                c.dropout = 0.0;
                sweep.push_back(c);
            }
        }
    }

    double overall = 0.0;
    for (const auto& cfg : sweep) {
        const auto rep = gradcheck_model(cfg, a.seed, a.opt);
        const auto worst = std::max_element(
            rep.tensors.begin(), rep.tensors.end(),
            [](const auto& x, const auto& y) { return x.max_rel_err < y.max_rel_err; });
        std::printf("gradcheck H=%d K=%d top_k=%d: probes=%d max_rel_err=%.3e (worst %s)\n",
                    cfg.hidden, cfg.experts, cfg.top_k, rep.probes, rep.max_rel_err,
                    worst->name.c_str());
        overall = std::max(overall, rep.max_rel_err);
    }
    const bool pass = overall < 1e-4;
    std::printf("gradcheck overall max_rel_err=%.3e gate=1e-4 %s\n", overall,
                pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ST-MoE-BERT mobility pipeline"};
    app.require_subcommand(1);
    app.footer(config_help());

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Synthesize a commuter city CSV + params sidecar");
    g->footer(
        "Params file keys: users, grid, days, seed, eps, presence_work,\n"
        "presence_off, excursion_radius, home_clusters, work_clusters,\n"
        "cluster_spread. Explicit flags override the file.");
    g->add_option("--out", gen.out, "output CSV path")->required();
    g->add_option("--params", gen.params_file, "params file (sidecar format)");
    gen.o_users = g->add_option("--users", gen.flags.users, "number of users");
    gen.o_grid = g->add_option("--grid", gen.flags.G, "grid side length");
    gen.o_seed = g->add_option("--seed", gen.flags.seed, "generator seed");
    gen.o_eps = g->add_option("--eps", gen.flags.eps, "excursion probability");
    gen.o_days = g->add_option("--days", gen.flags.days, "days to simulate");

    const auto add_train_common = [&](CLI::App* s, TrainArgs& t) {
        s->add_option("--data", t.data, "city CSV")->required();
        s->add_option("--out", t.out, "checkpoint/log directory")->required();
        s->add_option("--config", t.config_file, "key=value run config");
        s->add_option("--set", t.sets, "override one config key (key=value, repeatable)");
        s->add_option("--resume", t.resume, "checkpoint to continue from (same run)");
        t.o_epochs = s->add_option("--epochs", t.epochs, "training epochs");
        t.o_seed = s->add_option("--seed", t.seed, "training seed");
        s->footer(config_help());
    };

    TrainArgs pre, fin, scr;
    auto* p = app.add_subcommand("pretrain", "Masked-location pretraining on a source city");
    add_train_common(p, pre);
    auto* f = app.add_subcommand("finetune", "Transfer a pretrained checkpoint to a new city");
    f->add_option("--from", fin.from, "pretrained checkpoint")->required();
    add_train_common(f, fin);
    auto* s = app.add_subcommand("train-scratch", "Train on the target city with no transfer");
    add_train_common(s, scr);

    EvalArgs ev;
    auto* e = app.add_subcommand("evaluate", "Score a checkpoint or baseline on test days");
    e->add_option("--model", ev.model_path, "model checkpoint");
    e->add_option("--baseline", ev.baseline, "baseline name (hf)");
    e->add_option("--data", ev.data, "city CSV")->required();
    e->add_option("--report", ev.report, "per-window metrics CSV")->required();
    e->add_option("--config", ev.config_file, "key=value run config");
    e->add_option("--set", ev.sets, "override one config key (repeatable)");
    e->footer(config_help());

    GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck",
                                 "Finite-difference audit of every parameter gradient");
    c->add_option("--config", gc.config_file, "check this config instead of the default sweep");
    c->add_option("--set", gc.sets, "override one config key (repeatable)");
    c->add_option("--seed", gc.seed, "model/probe seed");
    c->add_option("--step", gc.opt.step, "central-difference step");
    c->add_option("--probes", gc.opt.random_probes, "random probes per tensor");
    c->footer(config_help());

    int code = 0;
    g->callback([&] { code = cmd_generate(gen); });
    p->callback([&] { code = cmd_train("pretrain", pre); });
    f->callback([&] { code = cmd_train("finetune", fin); });
    s->callback([&] { code = cmd_train("scratch", scr); });
    e->callback([&] { code = cmd_evaluate(ev); });
    c->callback([&] { code = cmd_gradcheck(gc); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int cli_code = app.exit(err);
        return cli_code == 0 ? 0 : 64;
    } catch (const std::invalid_argument& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 64;
    } catch (const std::runtime_error& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return std::string(err.what()).find("architecture mismatch") != std::string::npos ? 3
                                                                                          : 2;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
    return code;
}
