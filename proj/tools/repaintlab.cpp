#include "repaintlab/cli/app.hpp"

int main(int argc, char** argv) { return repaintlab::cli::run({argv, argv + argc}); }
