#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "slm/error.hpp"
#include "slm/parallel.hpp"

namespace {

void print_report(const slm::Report& report) { report.write_text(std::cout); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spoken language modeling toolkit: synthetic corpora, k-means units, "
                 "masked-prediction models and zero-shot metrics"};
    app.require_subcommand(1);

    int jobs = 1;
    app.add_option("--jobs", jobs, "Worker threads (results are independent of this)")
        ->capture_default_str();

    slm::cli::GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen", "Generate a synthetic corpus");
    cmd_gen->add_option("--config", gen.config, "Corpus config file");
    cmd_gen->add_option("--set", gen.overrides, "Override config keys (key=value)");
    cmd_gen->add_option("--out", gen.out, "Output corpus directory")->required();

    slm::cli::QuantizeArgs quantize;
    auto* cmd_quantize = app.add_subcommand("quantize", "Fit a k-means codebook and quantize");
    cmd_quantize->add_option("--corpus", quantize.corpus, "Corpus directory")->required();
    cmd_quantize->add_option("--out", quantize.out, "Units output directory")->required();
    cmd_quantize->add_option("--k", quantize.k, "Cluster count")->capture_default_str();
    cmd_quantize->add_option("--seed", quantize.seed, "Seed")->capture_default_str();
    cmd_quantize->add_option("--max-frames", quantize.max_frames, "Fit subsample bound (0 = all)")
        ->capture_default_str();
    cmd_quantize->add_option("--max-iters", quantize.max_iters, "Lloyd iteration cap")
        ->capture_default_str();
    cmd_quantize->add_option("--tol", quantize.tol, "Relative centroid-shift stop")
        ->capture_default_str();

    slm::cli::TrainArgs train;
    auto* cmd_train = app.add_subcommand("train", "Train a masked-prediction model");
    cmd_train->add_option("--corpus", train.corpus, "Corpus directory")->required();
    cmd_train->add_option("--units", train.units, "Units directory (discrete modes)");
    cmd_train->add_option("--config", train.config, "Model/training config file");
    cmd_train->add_option("--set", train.overrides, "Override config keys (key=value)");
    cmd_train->add_option("--out", train.out, "Model output file")->required();

    slm::cli::EvalAbxArgs abx;
    auto* cmd_abx = app.add_subcommand("eval-abx", "Phonetic discriminability (ABX)");
    cmd_abx->add_option("--corpus", abx.corpus, "Corpus directory")->required();
    cmd_abx->add_option("--units", abx.units, "Units directory: score dequantized units");
    cmd_abx->add_option("--manifest", abx.manifest, "Manifest name or path")
        ->capture_default_str();
    cmd_abx->add_option("--mode", abx.mode, "within | across")->capture_default_str();
    cmd_abx->add_option("--out", abx.out, "Report stem");

    slm::cli::EvalPairsArgs pairs;
    auto* cmd_pairs = app.add_subcommand("eval-pairs", "Spot-the-word / acceptability accuracy");
    cmd_pairs->add_option("--corpus", pairs.corpus, "Corpus directory")->required();
    cmd_pairs->add_option("--units", pairs.units, "Units directory (discrete models)");
    cmd_pairs->add_option("--model", pairs.model, "Trained model file")->required();
    cmd_pairs->add_option("--manifest", pairs.manifest, "Manifest name or path")
        ->capture_default_str();
    cmd_pairs->add_option("--tune-on", pairs.tune_on, "Dev manifest for window grid search");
    cmd_pairs->add_option("--window", pairs.window, "Masked window size M")
        ->capture_default_str();
    cmd_pairs->add_option("--step", pairs.step, "Window step")->capture_default_str();
    cmd_pairs->add_option("--seed", pairs.seed, "Negative-sampling seed (NCE models)")
        ->capture_default_str();
    cmd_pairs->add_option("--out", pairs.out, "Report stem");

    slm::cli::EvalSimiArgs simi;
    auto* cmd_simi = app.add_subcommand("eval-simi", "Weighted similarity correlation (wSIMI)");
    cmd_simi->add_option("--corpus", simi.corpus, "Corpus directory")->required();
    cmd_simi->add_option("--units", simi.units, "Units directory (discrete models)");
    cmd_simi->add_option("--model", simi.model, "Trained model file")->required();
    cmd_simi->add_option("--manifest", simi.manifest, "Manifest name or path")
        ->capture_default_str();
    cmd_simi->add_option("--tune-on", simi.tune_on, "Dev manifest for layer/pooling search");
    cmd_simi->add_option("--layer", simi.layer, "Hidden layer to pool")->capture_default_str();
    cmd_simi->add_option("--pooling", simi.pooling, "mean | max | min")->capture_default_str();
    cmd_simi->add_option("--out", simi.out, "Report stem");

    slm::cli::ProbeArgs probe;
    auto* cmd_probe = app.add_subcommand("probe-speaker", "Speaker-identity probe");
    cmd_probe->add_option("--corpus", probe.corpus, "Corpus directory")->required();
    cmd_probe->add_option("--units", probe.units, "Units directory: probe units, not features");
    cmd_probe->add_option("--split", probe.split, "train | dev | test")->capture_default_str();
    cmd_probe->add_option("--epochs", probe.epochs, "Training epochs")->capture_default_str();
    cmd_probe->add_option("--learning-rate", probe.learning_rate, "Probe learning rate")
        ->capture_default_str();
    cmd_probe->add_option("--seed", probe.seed, "Split/init seed")->capture_default_str();
    cmd_probe->add_option("--out", probe.out, "Report stem");

    slm::cli::AlignArgs align;
    auto* cmd_align = app.add_subcommand("align-units", "Unit-phoneme alignment analysis");
    cmd_align->add_option("--corpus", align.corpus, "Corpus directory")->required();
    cmd_align->add_option("--units", align.units, "Units directory")->required();
    cmd_align->add_option("--split", align.split, "train | dev | test")->capture_default_str();
    cmd_align->add_option("--out", align.out, "Output stem")->required();

    slm::cli::SweepArgs sweep;
    auto* cmd_sweep = app.add_subcommand("sweep", "Cluster-count sweep: quantize, train, evaluate");
    cmd_sweep->add_option("--corpus", sweep.corpus, "Corpus directory")->required();
    cmd_sweep->add_option("--k-list", sweep.k_values, "Cluster counts")->delimiter(',');
    cmd_sweep->add_option("--config", sweep.config, "Model/training config file");
    cmd_sweep->add_option("--set", sweep.overrides, "Override config keys (key=value)");
    cmd_sweep->add_option("--seed", sweep.seed, "Base seed")->capture_default_str();
    cmd_sweep->add_option("--window", sweep.window, "m-PLP window")->capture_default_str();
    cmd_sweep->add_option("--step", sweep.step, "m-PLP step")->capture_default_str();
    cmd_sweep->add_option("--out", sweep.out, "Output directory")->required();

    slm::cli::GradCheckArgs grad;
    auto* cmd_grad = app.add_subcommand("grad-check", "Finite-difference gradient verification");
    cmd_grad->add_option("--loss", grad.losses, "Loss kinds to check")->delimiter(',');
    cmd_grad->add_option("--seed", grad.seed, "Seed")->capture_default_str();
    cmd_grad->add_option("--tolerance", grad.tolerance, "Max relative deviation")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    slm::set_default_jobs(jobs);

    try {
        if (cmd_gen->parsed()) {
            print_report(slm::cli::cmd_gen(gen));
        } else if (cmd_quantize->parsed()) {
            print_report(slm::cli::cmd_quantize(quantize));
        } else if (cmd_train->parsed()) {
            print_report(slm::cli::cmd_train(train));
        } else if (cmd_abx->parsed()) {
            print_report(slm::cli::cmd_eval_abx(abx));
        } else if (cmd_pairs->parsed()) {
            print_report(slm::cli::cmd_eval_pairs(pairs));
        } else if (cmd_simi->parsed()) {
            print_report(slm::cli::cmd_eval_simi(simi));
        } else if (cmd_probe->parsed()) {
            print_report(slm::cli::cmd_probe_speaker(probe));
        } else if (cmd_align->parsed()) {
            print_report(slm::cli::cmd_align_units(align));
        } else if (cmd_sweep->parsed()) {
            print_report(slm::cli::cmd_sweep(sweep));
        } else if (cmd_grad->parsed()) {
            const slm::Report report = slm::cli::cmd_grad_check(grad);
            print_report(report);
            if (report.value >= grad.tolerance) {
                std::cerr << "error: gradient check failed\n";
                return 1;
            }
        }
    } catch (const slm::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
