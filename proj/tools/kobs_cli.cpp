#include <CLI11.hpp>
#include <iostream>

#include "kobs/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"kobs: drive population identification, uncertainty weighting and observer synthesis"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config;
    std::vector<std::string> sets;
    int jobs = 0;
    app.add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override a config value, key.path=value");
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

    const std::vector<std::pair<std::string, std::string>> stages{
        {"simulate", "generate the synthetic drive population"},
        {"identify", "fit linear and Koopman models per drive"},
        {"quantify", "choose the nominal and uncertainty form"},
        {"fit-weights", "fit stable bounding weights"},
        {"synthesize", "mixed H2/Hinf observer gain synthesis"},
        {"evaluate", "run both observers on test episodes"},
        {"outliers", "flag drives outside the fitted bound"},
    };
    for (const auto& [name, help] : stages) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        std::optional<std::filesystem::path> file;
        if (!config.empty()) file = config;
        std::optional<int> j;
        if (jobs > 0) j = jobs;
        const auto c = kobs::load_config(file, sets, j);
        if (cmd == "simulate")
            kobs::cmd_simulate(c);
        else if (cmd == "identify")
            kobs::cmd_identify(c);
        else if (cmd == "quantify")
            kobs::cmd_quantify(c);
        else if (cmd == "fit-weights")
            kobs::cmd_fit_weights(c);
        else if (cmd == "synthesize")
            kobs::cmd_synthesize(c);
        else if (cmd == "evaluate")
            std::cout << kobs::cmd_evaluate(c).dump(2) << "\n";
        else if (cmd == "outliers")
            std::cout << kobs::cmd_outliers(c).dump(2) << "\n";
    } catch (const kobs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const kobs::InfeasibleError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << cmd << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
