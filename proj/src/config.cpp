// implemented later in this series
