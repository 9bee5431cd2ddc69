// probemap command-line driver.
//
//   probemap sweep    --config FILE [--out DIR]
//   probemap fit      --config FILE [--out DIR] [--map FILE] [--validation-map FILE]
//   probemap select   --config FILE [--out DIR] [--fit-map FILE] [--val-map FILE]
//   probemap quantize --config FILE [--out DIR] [--function FILE] [--map FILE]
//   probemap pipeline --config FILE [--out DIR]
//
// Exit codes: 0 success, 1 validation / input error, 2 numerical failure.

#include "probemap/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Args {
    std::string config;
    std::string out;
    std::string map;
    std::string validation_map;
    std::string fit_map;
    std::string val_map;
    std::string function;
};

std::string in_out(const probemap::PipelineConfig& c, const std::string& given, const char* name) {
    return given.empty() ? (std::filesystem::path(c.output_dir) / name).string() : given;
}

int run(const std::string& command, const Args& a) {
    try {
        probemap::PipelineConfig c = probemap::load_config(a.config);
        if (!a.out.empty()) c.output_dir = a.out;
        if (command == "sweep") {
            probemap::cmd_sweep(c, std::cout);
        } else if (command == "fit") {
            std::optional<std::string> val;
            if (!a.validation_map.empty()) {
                val = a.validation_map;
            }
            probemap::cmd_fit(c, in_out(c, a.map, "map.csv"), val, std::cout);
        } else if (command == "select") {
            probemap::cmd_select(c, in_out(c, a.fit_map, "map.csv"), in_out(c, a.val_map, "map_validation.csv"),
                                 std::cout);
        } else if (command == "quantize") {
            probemap::cmd_quantize(c, in_out(c, a.function, "approach.json"), in_out(c, a.map, "map.csv"),
                                   std::cout);
        } else {
            probemap::cmd_pipeline(c, std::cout);
        }
        return 0;
    } catch (const probemap::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"probemap: medium-temperature soft sensor toolkit"};
    app.require_subcommand(1);
    Args a;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config, "configuration file")->required();
        sub->add_option("--out", a.out, "output directory (overrides [output] dir)");
    };
    auto* sweep = app.add_subcommand("sweep", "simulate characteristic maps and a field snapshot");
    common(sweep);
    auto* fit = app.add_subcommand("fit", "fit the approach function");
    common(fit);
    fit->add_option("--map", a.map, "characteristic map CSV (default <out>/map.csv)");
    fit->add_option("--validation-map", a.validation_map, "held-out map CSV");
    auto* select = app.add_subcommand("select", "rank sensor subsets");
    common(select);
    select->add_option("--fit-map", a.fit_map, "fitting map CSV (default <out>/map.csv)");
    select->add_option("--val-map", a.val_map, "validation map CSV (default <out>/map_validation.csv)");
    auto* quantize = app.add_subcommand("quantize", "compile to a fixed-point program");
    common(quantize);
    quantize->add_option("--function", a.function, "approach function JSON (default <out>/approach.json)");
    quantize->add_option("--map", a.map, "map whose reading range is the operating range (default <out>/map.csv)");
    auto* pipeline = app.add_subcommand("pipeline", "run every stage");
    common(pipeline);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return run(app.get_subcommands().front()->get_name(), a);
}
