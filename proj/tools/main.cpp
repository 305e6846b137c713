#include "unifilter/cli.hpp"

int main(int argc, char** argv) { return unifilter::cli::run(argc, argv); }
