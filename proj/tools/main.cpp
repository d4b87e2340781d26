#include "sinkcache/cli.hpp"

int main(int argc, char** argv) { return sinkcache::run_cli(argc, argv); }
