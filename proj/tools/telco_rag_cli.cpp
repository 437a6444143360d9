// Command-line front end: ingest, train-router, ask, eval, route, serve.
// Every command reads the same JSON config (--config or TELCO_RAG_CONFIG).
// Failures print one line to stderr:
//   error kind=<kind> message=<json string>
// and exit 1 (2 for usage errors).

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <telco_rag/config.hpp>
#include <telco_rag/eval.hpp>
#include <telco_rag/runtime.hpp>
#include <telco_rag/service.hpp>

using namespace telco_rag;

namespace {

void fail_line(std::string_view kind, std::string_view message) {
    std::cerr << "error kind=" << kind << " message=" << nlohmann::json(std::string(message)).dump() << std::endl;
}

std::vector<std::string> read_options_file(const std::string& path) {
    const auto text = read_file(path);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        try {
            return nlohmann::json::parse(text).get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what());
        }
    }
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (auto t = trim(line); !t.empty()) out.push_back(std::move(t));
    return out;
}

Service* g_service = nullptr;

extern "C" void on_signal(int) {
    if (g_service) g_service->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval-augmented question answering over 3GPP standards"};
    app.require_subcommand(1);
    std::optional<std::string> config_path;
    app.add_option("-c,--config", config_path, "JSON config file (default: $TELCO_RAG_CONFIG)");

    auto* ingest = app.add_subcommand("ingest", "Chunk, embed and write the embedding store");
    std::string corpus_dir;
    std::optional<std::string> store_override;
    std::optional<long> chunk_size;
    ingest->add_option("corpus-dir", corpus_dir, "Directory with manifest.jsonl")->required();
    ingest->add_option("--store", store_override, "Output store directory (default: paths.store)");
    ingest->add_option("--chunk-size", chunk_size, "Tokens per chunk (default: retrieval.chunk_size)");

    auto* train = app.add_subcommand("train-router", "Train the series router");
    std::string examples_path, summaries_path;
    std::optional<std::string> router_out;
    std::size_t epochs = 30;
    std::vector<std::size_t> hidden = {512, 256};
    std::uint64_t seed = 42;
    train->add_option("examples", examples_path, "Labelled queries, one JSON object per line")->required();
    train->add_option("summaries", summaries_path, "Series summaries JSON")->required();
    train->add_option("--out", router_out, "Router file (default: paths.router)");
    train->add_option("--epochs", epochs)->capture_default_str();
    train->add_option("--hidden", hidden, "Hidden widths")->delimiter(',')->capture_default_str();
    train->add_option("--seed", seed)->capture_default_str();

    auto* ask = app.add_subcommand("ask", "Answer one question");
    std::string question;
    std::optional<std::string> mcq_file, mode_name;
    bool show_prompt = false;
    ask->add_option("question", question)->required();
    ask->add_option("--mcq", mcq_file, "Answer options: JSON array or one per line");
    ask->add_option("--mode", mode_name, "full, web, standards or llm-only");
    ask->add_flag("--show-prompt", show_prompt, "Include the rendered prompt in the output");

    auto* eval = app.add_subcommand("eval", "Score a multiple-choice dataset");
    std::string dataset;
    std::optional<std::string> report_path, eval_mode;
    std::optional<std::size_t> parallel;
    eval->add_option("dataset", dataset)->required();
    eval->add_option("--report", report_path, "Write the JSON report here, the item table beside it");
    eval->add_option("--mode", eval_mode, "full, web, standards or llm-only");
    eval->add_option("--parallel", parallel, "Items answered concurrently (default: eval_parallelism)");

    auto* route = app.add_subcommand("route", "Predict the most relevant series");
    std::string route_question;
    std::size_t k = 5;
    bool route_json = false;
    route->add_option("question", route_question)->required();
    route->add_option("--k", k)->capture_default_str();
    route->add_flag("--json", route_json, "Print ids with probabilities as JSON");

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::optional<int> port;
    std::optional<std::string> bind;
    serve->add_option("--port", port, "Port (default: server.port)");
    serve->add_option("--bind", bind, "Address (default: server.bind)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        fail_line("usage", e.what());
        return 2;
    }

    try {
        AppConfig cfg = load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt);

        if (*ingest) {
            const std::filesystem::path out = store_override ? std::filesystem::path(*store_override) : cfg.store;
            EmbedClient embedder(make_embedding_provider(cfg));
            const auto s = ingest_corpus(corpus_dir, out, embedder,
                                         ChunkingConfig{chunk_size.value_or(cfg.retrieval.chunk_size)});
            std::cout << s.to_json().dump() << std::endl;
            return 0;
        }

        if (*train) {
            const auto out = router_out ? std::filesystem::path(*router_out) : cfg.router.value_or("router.bin");
            EmbedClient embedder(make_embedding_provider(cfg));
            const auto summaries = SeriesSummaries::load(summaries_path, &embedder);
            const auto examples = load_router_examples(examples_path, &embedder);
            RouterShape shape;
            shape.dim = embedder.dim();
            shape.hidden = hidden;
            Router m = Router::init(shape, seed);
            TrainConfig tc;
            tc.epochs = epochs;
            tc.seed = seed;
            train_router(m, examples, summaries, tc);
            save_router(out, m);
            const auto ev = evaluate_topk(m, examples, summaries, {1, 3, 5});
            std::cout << nlohmann::json{{"router", out.string()},
                                        {"examples", examples.size()},
                                        {"epochs_run", m.meta.epochs_run},
                                        {"best_epoch", m.meta.best_epoch},
                                        {"degenerate", m.meta.degenerate},
                                        {"train_top1", ev.accuracy.at(1)},
                                        {"train_top5", ev.accuracy.at(5)}}
                             .dump()
                      << std::endl;
            return 0;
        }

        if (*ask) {
            Runtime rt(cfg);
            auto pipeline = rt.pipeline();
            std::optional<std::vector<std::string>> options;
            if (mcq_file) options = read_options_file(*mcq_file);
            std::optional<Mode> mode;
            if (mode_name) mode = mode_from_string(*mode_name);
            auto j = pipeline.answer(question, options, mode).to_json();
            if (!show_prompt) j.erase("prompt");
            std::cout << j.dump(2) << std::endl;
            return 0;
        }

        if (*eval) {
            if (eval_mode) cfg.mode = mode_from_string(*eval_mode);
            Runtime rt(cfg);
            auto pipeline = rt.pipeline();
            const auto ds = load_mcq(dataset);
            auto snapshot = cfg.to_json();
            snapshot.erase("source");
            snapshot["dataset"] = std::filesystem::path(dataset).filename().string();
            const auto rep = run_mcq_eval(ds, pipeline, parallel.value_or(cfg.eval_parallelism), snapshot);
            const auto text = rep.to_json().dump(2) + "\n";
            if (report_path) {
                write_file(*report_path, text);
                write_file(*report_path + ".items.csv", rep.items_csv());
                if (!rep.items.empty())
                    write_file(*report_path + ".latency.json", latency_report(rep).to_json().dump(2) + "\n");
                std::cout << nlohmann::json{{"accuracy", rep.accuracy},
                                            {"correct", rep.correct},
                                            {"total", rep.total},
                                            {"skipped", rep.skipped.size()},
                                            {"report", *report_path}}
                                 .dump()
                          << std::endl;
            } else {
                std::cout << text;
            }
            return 0;
        }

        if (*route) {
            Runtime rt(cfg);
            const auto ranked = rt.route(route_question, k);
            if (route_json) {
                nlohmann::json out = nlohmann::json::array();
                for (const auto& [s, p] : ranked) out.push_back({{"series", s}, {"probability", p}});
                std::cout << out.dump() << std::endl;
            } else {
                for (std::size_t i = 0; i < ranked.size(); ++i) std::cout << (i ? " " : "") << ranked[i].first;
                std::cout << std::endl;
            }
            return 0;
        }

        if (*serve) {
            Runtime rt(cfg);
            Service svc(rt);
            g_service = &svc;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            const auto addr = bind.value_or(cfg.bind);
            const int p = port.value_or(cfg.port);
            std::cerr << "listening on " << addr << ":" << p << std::endl;
            svc.serve(addr, p);
            return 0;
        }
    } catch (const Error& e) {
        fail_line(e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        fail_line("internal", e.what());
        return 1;
    }
    return 0;
}
