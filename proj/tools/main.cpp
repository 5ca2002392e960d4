#include "chromaflow/cli.hpp"

int main(int argc, char** argv) { return chromaflow::cli::run(argc, argv); }
