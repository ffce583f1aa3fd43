int main() { return 0; } // CLI lands after the library modules
