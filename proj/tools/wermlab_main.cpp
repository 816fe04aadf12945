#include "wermlab/cli.hpp"

int main(int argc, char** argv) { return wermlab::cli::run(argc, argv); }
