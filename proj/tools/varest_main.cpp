#include "varest/cli.hpp"

int main(int argc, char** argv) { return varest::cli::run(argc, argv); }
