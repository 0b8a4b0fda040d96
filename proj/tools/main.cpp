#include "fgsam/cli.hpp"

int main(int argc, char** argv) { return fgsam::cli::run(argc, argv); }
