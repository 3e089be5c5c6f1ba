#include "featret/corpus.hpp"
#include "featret/synthetic.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Write a synthetic annotated review corpus"};
    featret::SyntheticOptions options;
    std::string out;
    app.add_option("-n,--sentences", options.sentences, "number of sentences")->check(CLI::PositiveNumber);
    app.add_option("--seed", options.seed, "generator seed");
    app.add_option("--id-prefix", options.id_prefix, "sentence id prefix");
    app.add_option("-o,--out", out, "output file")->required();
    CLI11_PARSE(app, argc, argv);
    try {
        const auto corpus = featret::generate_synthetic_corpus(options);
        featret::write_corpus(corpus, out);
        std::cout << "sentences=" << corpus.size() << "\npath=" << out << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
