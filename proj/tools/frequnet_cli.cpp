#include "frequnet/cli.hpp"

int main(int argc, char** argv) { return frequnet::cli::run(argc, argv); }
