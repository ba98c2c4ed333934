#include "hqnn/cli.hpp"

int main(int argc, char** argv) { return hqnn::cli::run(argc, argv); }
